#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "ufcn/activation.hpp"

using namespace ufcn;

namespace {

Tensor<double> scalar(double v) { return Tensor<double>(1, 1, 1, v); }

double act1(double x, Activation a) { return activate(scalar(x), a).data[0]; }

}  // namespace

TEST_SUITE("activation") {

TEST_CASE("scalar examples") {
  CHECK(act1(-2.0, {ActivationKind::Relu}) == 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  // x * sigmoid(x) at x = 1: 1 / (1 + e^-1)
  CHECK(act1(1.0, {ActivationKind::Silu, 1.0}) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(act1(-5.0, {ActivationKind::Tilu, 1.0, 0.01}) == 0.01);
  CHECK(act1(0.5, {ActivationKind::Tilu, 1.0, 0.01}) == 0.5);
}

TEST_CASE("non-finite input is a numerical-domain error") {
  for (auto kind : {ActivationKind::Silu, ActivationKind::Relu, ActivationKind::Tilu}) {
    CHECK_THROWS_AS(activate(scalar(std::numeric_limits<double>::quiet_NaN()), {kind}), NumericalError);
    CHECK_THROWS_AS(activate(scalar(std::numeric_limits<double>::infinity()), {kind}), NumericalError);
  }
}

TEST_CASE("TiLU floor bounds every output") {
  const auto x = test::random_tensor<double>(4, 16, 16, 5, -10.0, 10.0);
  const Activation a{ActivationKind::Tilu, 1.0, 0.02};
  const auto y = activate(x, a);
  CHECK(*std::min_element(y.data.begin(), y.data.end()) >= 0.02);
}

TEST_CASE("TiLU floor must be in (0, 0.1)") {
  CHECK_THROWS_AS((Activation{ActivationKind::Tilu, 1.0, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((Activation{ActivationKind::Tilu, 1.0, 0.1}.validate()), ConfigError);
  CHECK_NOTHROW((Activation{ActivationKind::Tilu, 1.0, 0.05}.validate()));
}

TEST_CASE("SiLU derivatives match central differences in x and beta") {
  const double h = 1e-6;
  for (double beta : {0.5, 1.0, 1.7}) {
    for (double x : {-3.0, -0.4, 0.0, 0.9, 2.5}) {
      Activation a{ActivationKind::Silu, beta};
      double dbeta = 0;
      const auto dx = activate_backward(scalar(x), scalar(1.0), a, &dbeta).data[0];
      const double fd_x = (act1(x + h, a) - act1(x - h, a)) / (2 * h);
      Activation ap = a, am = a;
      ap.beta += h;
      am.beta -= h;
      const double fd_b = (act1(x, ap) - act1(x, am)) / (2 * h);
      CHECK(dx == doctest::Approx(fd_x).epsilon(1e-8));
      CHECK(dbeta == doctest::Approx(fd_b).epsilon(1e-8));
    }
  }
}

TEST_CASE("kinks take the right derivative") {
  CHECK(activate_backward(scalar(0.0), scalar(1.0), {ActivationKind::Relu}, (double*)nullptr).data[0] == 1.0);
  CHECK(activate_backward(scalar(-1e-9), scalar(1.0), {ActivationKind::Relu}, (double*)nullptr).data[0] == 0.0);
  const Activation t{ActivationKind::Tilu, 1.0, 0.01};
  CHECK(activate_backward(scalar(0.01), scalar(1.0), t, (double*)nullptr).data[0] == 1.0);
  CHECK(activate_backward(scalar(0.0), scalar(1.0), t, (double*)nullptr).data[0] == 0.0);
}

TEST_CASE("names round-trip") {
  for (auto k : {ActivationKind::Silu, ActivationKind::Tilu, ActivationKind::Relu}) {
    CHECK(activation_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(activation_from_string("gelu"), ConfigError);
}

}

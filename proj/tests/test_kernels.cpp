#include "doctest.h"
#include "test_util.hpp"
#include "ufcn/kernels.hpp"

using namespace ufcn;
using ufcn::test::max_abs_diff;
using ufcn::test::random_tensor;
using ufcn::test::random_vector;

TEST_SUITE("kernels") {

TEST_CASE_TEMPLATE("conv2d matches the serial reference", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-11;
  struct Case { int in_c, out_c, k, h, w; };
  for (const Case cs : {Case{1, 4, 3, 8, 8}, Case{3, 5, 3, 6, 10}, Case{4, 2, 1, 5, 7}, Case{2, 3, 5, 9, 9}}) {
    CAPTURE(cs.in_c);
    CAPTURE(cs.k);
    const auto x = random_tensor<T>(cs.in_c, cs.h, cs.w, 11);
    const auto w = random_vector<T>(static_cast<std::size_t>(cs.out_c) * cs.in_c * cs.k * cs.k, 12);
    const auto b = random_vector<T>(cs.out_c, 13);
    Tensor<T> y_fast, y_ref;
    kernels::conv2d_forward<T>(x, w, b, cs.out_c, cs.k, y_fast);
    kernels::reference::conv2d_forward<T>(x, w, b, cs.out_c, cs.k, y_ref);
    CHECK(max_abs_diff(y_fast.data, y_ref.data) < tol);

    const auto dy = random_tensor<T>(cs.out_c, cs.h, cs.w, 14);
    std::vector<T> dw_fast(w.size()), dw_ref(w.size()), db_fast(b.size()), db_ref(b.size());
    Tensor<T> dx_fast, dx_ref;
    kernels::conv2d_backward<T>(x, w, cs.out_c, cs.k, dy, &dx_fast, dw_fast, db_fast);
    kernels::reference::conv2d_backward<T>(x, w, cs.out_c, cs.k, dy, &dx_ref, dw_ref, db_ref);
    CHECK(max_abs_diff(dx_fast.data, dx_ref.data) < tol);
    CHECK(max_abs_diff(dw_fast, dw_ref) < tol * 10);
    CHECK(max_abs_diff(db_fast, db_ref) < tol * 10);
  }
}

TEST_CASE_TEMPLATE("upconv2x2 matches the serial reference", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-11;
  const int in_c = 6, out_c = 3;
  const auto x = random_tensor<T>(in_c, 4, 5, 21);
  const auto w = random_vector<T>(static_cast<std::size_t>(in_c) * out_c * 4, 22);
  const auto b = random_vector<T>(out_c, 23);
  Tensor<T> y_fast, y_ref;
  kernels::upconv2x2_forward<T>(x, w, b, out_c, y_fast);
  kernels::reference::upconv2x2_forward<T>(x, w, b, out_c, y_ref);
  REQUIRE(y_fast.h == 8);
  REQUIRE(y_fast.w == 10);
  CHECK(max_abs_diff(y_fast.data, y_ref.data) < tol);

  const auto dy = random_tensor<T>(out_c, 8, 10, 24);
  std::vector<T> dw_fast(w.size()), dw_ref(w.size()), db_fast(out_c), db_ref(out_c);
  Tensor<T> dx_fast, dx_ref;
  kernels::upconv2x2_backward<T>(x, w, out_c, dy, &dx_fast, dw_fast, db_fast);
  kernels::reference::upconv2x2_backward<T>(x, w, out_c, dy, &dx_ref, dw_ref, db_ref);
  CHECK(max_abs_diff(dx_fast.data, dx_ref.data) < tol);
  CHECK(max_abs_diff(dw_fast, dw_ref) < tol);
  CHECK(max_abs_diff(db_fast, db_ref) < tol);
}

TEST_CASE_TEMPLATE("pooling and bilinear upsampling match the serial reference", T, float, double) {
  const auto x = random_tensor<T>(3, 6, 8, 31);
  Tensor<T> p_fast, p_ref;
  std::vector<int> a_fast, a_ref;
  kernels::maxpool2x2_forward<T>(x, p_fast, a_fast);
  kernels::reference::maxpool2x2_forward<T>(x, p_ref, a_ref);
  CHECK(p_fast.data == p_ref.data);
  CHECK(a_fast == a_ref);

  const auto g = random_tensor<T>(3, 3, 4, 32);
  Tensor<T> dp_fast, dp_ref;
  kernels::maxpool2x2_backward<T>(g, a_fast, 6, 8, dp_fast);
  kernels::reference::maxpool2x2_backward<T>(g, a_ref, 6, 8, dp_ref);
  CHECK(dp_fast.data == dp_ref.data);

  Tensor<T> u_fast, u_ref;
  kernels::upsample_bilinear2x_forward<T>(x, u_fast);
  kernels::reference::upsample_bilinear2x_forward<T>(x, u_ref);
  CHECK(max_abs_diff(u_fast.data, u_ref.data) < 1e-6);

  const auto gu = random_tensor<T>(3, 12, 16, 33);
  Tensor<T> du_fast, du_ref;
  kernels::upsample_bilinear2x_backward<T>(gu, du_fast);
  kernels::reference::upsample_bilinear2x_backward<T>(gu, du_ref);
  CHECK(max_abs_diff(du_fast.data, du_ref.data) < 1e-5);
}

TEST_CASE("backward kernels are the adjoints of the forward kernels") {
  // <dy, A x> == <A^T dy, x> for the linear part of each kernel.
  const auto x = random_tensor<double>(3, 6, 6, 41);
  const auto w = random_vector<double>(4 * 3 * 9, 42);
  Tensor<double> y;
  kernels::reference::conv2d_forward<double>(x, w, {}, 4, 3, y);
  const auto dy = random_tensor<double>(4, 6, 6, 43);
  Tensor<double> dx;
  std::vector<double> dw(w.size());
  kernels::reference::conv2d_backward<double>(x, w, 4, 3, dy, &dx, dw, {});
  double lhs = 0, rhs = 0, wdot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += dy.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += dx.data[i] * x.data[i];
  for (std::size_t i = 0; i < w.size(); ++i) wdot += dw[i] * w[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(lhs == doctest::Approx(wdot).epsilon(1e-12));

  Tensor<double> u;
  kernels::reference::upsample_bilinear2x_forward<double>(x, u);
  const auto du = random_tensor<double>(3, 12, 12, 44);
  Tensor<double> dxu;
  kernels::reference::upsample_bilinear2x_backward<double>(du, dxu);
  double l2 = 0, r2 = 0;
  for (std::size_t i = 0; i < u.size(); ++i) l2 += du.data[i] * u.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) r2 += dxu.data[i] * x.data[i];
  CHECK(l2 == doctest::Approx(r2).epsilon(1e-12));
}

TEST_CASE("bilinear upsampling preserves constants") {
  Tensor<double> x(2, 4, 4, 0.37);
  Tensor<double> y;
  kernels::upsample_bilinear2x_forward<double>(x, y);
  for (double v : y.data) CHECK(v == doctest::Approx(0.37));
}

TEST_CASE("maxpool rejects odd sizes") {
  Tensor<float> x(1, 5, 4);
  Tensor<float> y;
  std::vector<int> a;
  CHECK_THROWS_AS(kernels::maxpool2x2_forward<float>(x, y, a), ShapeError);
}

}

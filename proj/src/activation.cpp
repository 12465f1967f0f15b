#include "ufcn/activation.hpp"

namespace ufcn {

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Silu:
      return "silu";
    case ActivationKind::Tilu:
      return "tilu";
    case ActivationKind::Relu:
      return "relu";
  }
  return "silu";
}

ActivationKind activation_from_string(std::string_view name) {
  if (name == "silu") return ActivationKind::Silu;
  if (name == "tilu") return ActivationKind::Tilu;
  if (name == "relu") return ActivationKind::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void Activation::validate() const {
  if (!std::isfinite(beta)) throw ConfigError("activation beta must be finite");
  if (kind == ActivationKind::Tilu && !(hard_floor > 0.0 && hard_floor < 0.1)) {
    throw ConfigError("TiLU hard_floor must lie in (0, 0.1)");
  }
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, const Activation& act) {
  Tensor<T> y(x.c, x.h, x.w);
  bool finite = true;
  const T beta = static_cast<T>(act.beta);
  const T floor = static_cast<T>(act.hard_floor);
  const std::size_t n = x.size();
  switch (act.kind) {
    case ActivationKind::Relu:
      for (std::size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        finite &= std::isfinite(v);
        y.data[i] = v > T(0) ? v : T(0);
      }
      break;
    case ActivationKind::Tilu:
      for (std::size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        finite &= std::isfinite(v);
        y.data[i] = v > floor ? v : floor;
      }
      break;
    case ActivationKind::Silu:
      for (std::size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        finite &= std::isfinite(v);
        y.data[i] = v * sigmoid(beta * v);
      }
      break;
  }
  if (!finite) throw NumericalError("activate: non-finite input (" + to_string(act.kind) + ")");
  return y;
}

template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& dy, const Activation& act,
                            T* dbeta) {
  Tensor<T> dx(x.c, x.h, x.w);
  const std::size_t n = x.size();
  const T beta = static_cast<T>(act.beta);
  const T floor = static_cast<T>(act.hard_floor);
  switch (act.kind) {
    case ActivationKind::Relu:
      for (std::size_t i = 0; i < n; ++i) dx.data[i] = x.data[i] >= T(0) ? dy.data[i] : T(0);
      break;
    case ActivationKind::Tilu:
      for (std::size_t i = 0; i < n; ++i) dx.data[i] = x.data[i] >= floor ? dy.data[i] : T(0);
      break;
    case ActivationKind::Silu: {
      T gb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        const T s = sigmoid(beta * v);
        const T ds = s * (T(1) - s);
        dx.data[i] = dy.data[i] * (s + beta * v * ds);
        gb += dy.data[i] * v * v * ds;
      }
      if (dbeta) *dbeta += gb;
      break;
    }
  }
  return dx;
}

template Tensor<float> activate<float>(const Tensor<float>&, const Activation&);
template Tensor<double> activate<double>(const Tensor<double>&, const Activation&);
template Tensor<float> activate_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                                const Activation&, float*);
template Tensor<double> activate_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                  const Activation&, double*);

}  // namespace ufcn

#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "ufcn/tensor.hpp"

namespace ufcn {

enum class ActivationKind { Silu, Tilu, Relu };

std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(std::string_view name);

// One activation site. beta is the trainable SiLU slope (ignored otherwise);
// hard_floor is the TiLU floor.
struct Activation {
  ActivationKind kind = ActivationKind::Silu;
  double beta = 1.0;
  double hard_floor = 0.01;

  void validate() const;
};

template <typename T>
inline T sigmoid(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Elementwise activation. Throws NumericalError on non-finite input.
template <typename T>
Tensor<T> activate(const Tensor<T>& x, const Activation& act);

// Backward of activate(). Returns dL/dx; accumulates dL/dbeta into *dbeta
// (SiLU only). Kinks use the right derivative.
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& dy, const Activation& act,
                            T* dbeta);

template <typename T>
T activate_scalar(T x, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Relu:
      return x > T(0) ? x : T(0);
    case ActivationKind::Tilu: {
      const T floor = static_cast<T>(act.hard_floor);
      return x > floor ? x : floor;
    }
    case ActivationKind::Silu:
    default:
      return x * sigmoid(static_cast<T>(act.beta) * x);
  }
}

}  // namespace ufcn

#pragma once

// Parameterized building blocks shared by the UFCN and the baseline U-Net.
// Layers hold indices into a ParamSet, never the values themselves, so one
// layer description can run against any parameter snapshot.

#include <string>

#include "ufcn/activation.hpp"
#include "ufcn/kernels.hpp"
#include "ufcn/params.hpp"
#include "ufcn/rng.hpp"

namespace ufcn {

template <typename T>
struct ConvLayer {
  int weight = -1;
  int bias = -1;
  int in_c = 0;
  int out_c = 0;
  int k = 1;

  static ConvLayer create(ParamSet<T>& ps, const std::string& name, int in_c, int out_c, int k,
                          bool with_bias = true) {
    ConvLayer l;
    l.in_c = in_c;
    l.out_c = out_c;
    l.k = k;
    l.weight = ps.add(name + ".weight", {out_c, in_c, k, k}, ParamRole::Weight, in_c * k * k);
    if (with_bias) l.bias = ps.add(name + ".bias", {out_c}, ParamRole::Bias);
    return l;
  }

  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x) const {
    if (x.c != in_c) throw ShapeError("conv: expected " + std::to_string(in_c) + " channels, got " + shape_string(x));
    Tensor<T> y;
    kernels::conv2d_forward<T>(x, ps[weight].view(),
                               bias >= 0 ? ps[bias].view() : std::span<const T>{}, out_c, k, y);
    return y;
  }

  // Returns dL/dx (empty tensor when need_dx is false).
  Tensor<T> backward(const ParamSet<T>& ps, const Tensor<T>& x, const Tensor<T>& dy,
                     Gradients<T>& g, bool need_dx = true) const {
    Tensor<T> dx;
    kernels::conv2d_backward<T>(x, ps[weight].view(), out_c, k, dy, need_dx ? &dx : nullptr,
                                g[weight], bias >= 0 ? std::span<T>(g[bias]) : std::span<T>{});
    return dx;
  }
};

template <typename T>
struct UpConvLayer {
  int weight = -1;
  int bias = -1;
  int in_c = 0;
  int out_c = 0;

  static UpConvLayer create(ParamSet<T>& ps, const std::string& name, int in_c, int out_c) {
    UpConvLayer l;
    l.in_c = in_c;
    l.out_c = out_c;
    l.weight = ps.add(name + ".weight", {in_c, out_c, 2, 2}, ParamRole::Weight, in_c);
    l.bias = ps.add(name + ".bias", {out_c}, ParamRole::Bias);
    return l;
  }

  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x) const {
    if (x.c != in_c) throw ShapeError("upconv: channel mismatch " + shape_string(x));
    Tensor<T> y;
    kernels::upconv2x2_forward<T>(x, ps[weight].view(), ps[bias].view(), out_c, y);
    return y;
  }

  Tensor<T> backward(const ParamSet<T>& ps, const Tensor<T>& x, const Tensor<T>& dy,
                     Gradients<T>& g) const {
    Tensor<T> dx;
    kernels::upconv2x2_backward<T>(x, ps[weight].view(), out_c, dy, &dx, g[weight], g[bias]);
    return dx;
  }
};

// An activation site. SiLU sites own a trainable scalar beta.
template <typename T>
struct ActSite {
  ActivationKind kind = ActivationKind::Silu;
  double hard_floor = 0.01;
  int beta = -1;

  static ActSite create(ParamSet<T>& ps, const std::string& name, ActivationKind kind,
                        double hard_floor) {
    ActSite a;
    a.kind = kind;
    a.hard_floor = hard_floor;
    if (kind == ActivationKind::Silu) a.beta = ps.add(name + ".beta", {1}, ParamRole::Beta);
    return a;
  }

  Activation resolve(const ParamSet<T>& ps) const {
    Activation act;
    act.kind = kind;
    act.hard_floor = hard_floor;
    if (beta >= 0) act.beta = static_cast<double>(ps[beta].value[0]);
    return act;
  }

  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x) const {
    return activate(x, resolve(ps));
  }

  Tensor<T> backward(const ParamSet<T>& ps, const Tensor<T>& x, const Tensor<T>& dy,
                     Gradients<T>& g) const {
    return activate_backward(x, dy, resolve(ps), beta >= 0 ? &g[beta][0] : nullptr);
  }
};

// Attention suppress gate.
//
//   PE   = W_E * U            (1x1, in_c -> gate_c)
//   PD   = W_D * D            (1x1, diff_c -> gate_c)
//   gate = sigmoid(W_A * relu(PE . PD))          single channel
//   gate'= gate where gate >= threshold, else floor
//   A    = gate' . PE                             broadcast over channels
//   yhat = sigmoid(w_f . GAP(A) + b_f)            hard suppressor
template <typename T>
struct AsgTrace {
  Tensor<T> pe, pd, prod, q, psi, gate, gate_eff, attention;
  std::vector<T> pooled;
  T logit = 0;
  T y_hat = 0;
};

template <typename T>
struct AsgLayer {
  ConvLayer<T> proj_e;
  ConvLayer<T> proj_d;
  ConvLayer<T> proj_a;
  int w_f = -1;
  int b_f = -1;
  int gate_c = 0;

  static AsgLayer create(ParamSet<T>& ps, const std::string& name, int in_c, int diff_c,
                         int gate_c);

  // Fills trace; returns trace.attention.
  const Tensor<T>& forward(const ParamSet<T>& ps, const Tensor<T>& upsampled,
                           const Tensor<T>& diff, double threshold, double floor,
                           AsgTrace<T>& trace) const;

  // d_attention: upstream gradient of A; d_yhat: dL/dyhat. Writes dL/dU and dL/dD.
  void backward(const ParamSet<T>& ps, const Tensor<T>& upsampled, const Tensor<T>& diff,
                const AsgTrace<T>& trace, double threshold, const Tensor<T>& d_attention,
                T d_yhat, Gradients<T>& g, Tensor<T>& d_upsampled, Tensor<T>& d_diff) const;
};

// Abnormality head: z = W_V * F (1x1, single channel) at half resolution;
// avm_prob = bilinear2x(sigmoid(z)); mask = avm_prob > tau. The head also
// yields an image-level probability sigmoid(LSE_r(z)) where
// LSE_r(z) = (1/r) log(mean(exp(r z))) is a smooth maximum of the logits.
template <typename T>
struct BamTrace {
  Tensor<T> logits;      // half resolution
  Tensor<T> prob_half;
  Tensor<T> prob;        // full resolution
  Tensor<std::uint8_t> mask;
  T pooled_logit = 0;
  T y_hat = 0;
};

template <typename T>
struct BamLayer {
  ConvLayer<T> head;

  static BamLayer create(ParamSet<T>& ps, const std::string& name, int in_c, int k = 1) {
    return {ConvLayer<T>::create(ps, name, in_c, 1, k)};
  }

  // Half-resolution features are upsampled 2x before thresholding.
  void forward(const ParamSet<T>& ps, const Tensor<T>& features, double tau, double sharpness,
               bool upsample, BamTrace<T>& trace) const;

  // Only the image-level probability carries gradient.
  Tensor<T> backward(const ParamSet<T>& ps, const Tensor<T>& features, const BamTrace<T>& trace,
                     double sharpness, T d_yhat, Gradients<T>& g) const;
};

// Fan-in-scaled uniform init: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
// biases 0, SiLU slopes 1.
template <typename T>
void init_params(ParamSet<T>& ps, std::uint64_t seed);

}  // namespace ufcn

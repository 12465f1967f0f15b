#pragma once

#include "ufcn/model.hpp"

namespace ufcn {

// SSIM constants: C1 = (K1 T)^2 and C2 = K2 T. Local statistics use a
// normalized Gaussian window with reflect padding, so the SSIM map has one
// entry per pixel.
struct SsimParams {
  int window_size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return k2 * dynamic_range; }
  std::vector<double> window() const;  // 1D taps, sum to 1
};

struct LossWeights {
  double lambda1 = 1.0;   // hard-suppressor BE weight
  double lambda2 = 1e-6;  // L2 weight

  void validate() const;
};

struct LossBreakdown {
  double recons = 0;
  double prob = 0;
  double l2 = 0;
  double total = 0;
};

template <typename T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params);

// mean(1 - SSIM(p)) over all pixels p.
template <typename T>
T ssim_loss(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params);

// Same value as ssim_loss; also writes dL/dx.
template <typename T>
T ssim_loss_grad(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params, Tensor<T>& dx);

inline constexpr double kProbClamp = 1e-7;

// -(y log yhat + (1-y) log(1-yhat)), yhat clamped to [1e-7, 1-1e-7].
double binary_cross_entropy(int y, double y_hat);
// d BE / d yhat (zero where the clamp is active).
double binary_cross_entropy_grad(int y, double y_hat);

// Sum of squared Weight-role parameters (biases and SiLU slopes excluded).
template <typename T>
double l2_penalty(const ParamSet<T>& params);
template <typename T>
void add_l2_grad(const ParamSet<T>& params, double scale, Gradients<T>& g);

// Per-pair loss terms. prob sums BE over every ASG suppressor and the
// abnormality head's image-level probability (L terms for an L-level model).
template <typename T>
LossBreakdown composite_loss(const ForwardOutput<T>& output, const Tensor<T>& current, int label,
                             const UfcnModel<T>& model, const SsimParams& ssim,
                             const LossWeights& weights);

// As composite_loss, also filling dL/d(outputs) for the data terms (the L2
// term's gradient is added separately with add_l2_grad).
template <typename T>
LossBreakdown composite_loss_grad(const ForwardOutput<T>& output, const Tensor<T>& current,
                                  int label, const UfcnModel<T>& model, const SsimParams& ssim,
                                  const LossWeights& weights, OutputGrads<T>& grads);

// Two-sided soft dice loss over all elements of s and r:
//   1 - (2 sum(s r) + eps) / (sum(s + r) + eps)
//     - (2 sum((1-s)(1-r)) + eps) / (sum(2 - s - r) + eps)
// Minimum -1 at s == r (binary), maximum -> 1 at s == 1 - r.
template <typename T>
T dice_loss(std::span<const T> s, std::span<const T> r, double eps);
template <typename T>
T dice_loss_grad(std::span<const T> s, std::span<const T> r, double eps, std::span<T> ds);

}  // namespace ufcn

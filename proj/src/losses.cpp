#include "ufcn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ufcn {

void SsimParams::validate() const {
  if (window_size <= 0 || window_size % 2 == 0) throw ConfigError("SSIM window must be odd and positive");
  if (!(sigma > 0.0)) throw ConfigError("SSIM sigma must be > 0");
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw ConfigError("SSIM K1, K2 must be > 0");
  if (!(dynamic_range > 0.0)) throw ConfigError("SSIM dynamic range must be > 0");
}

std::vector<double> SsimParams::window() const {
  const int r = window_size / 2;
  std::vector<double> w(window_size);
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    w[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += w[i + r];
  }
  for (auto& v : w) v /= sum;
  return w;
}

void LossWeights::validate() const {
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0 || lambda2 < 0) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

namespace {

int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// Separable Gaussian filter with reflect padding, and its adjoint.
template <typename T>
class GaussianFilter {
 public:
  GaussianFilter(const SsimParams& p, int h, int w) : h_(h), w_(w) {
    if (p.window_size > h || p.window_size > w) {
      throw ConfigError("SSIM window " + std::to_string(p.window_size) + " larger than image " +
                        std::to_string(h) + "x" + std::to_string(w));
    }
    const auto taps = p.window();
    for (double t : taps) taps_.push_back(static_cast<T>(t));
    radius_ = p.window_size / 2;
  }

  Buffer<T> apply(const Buffer<T>& in) const {
    Buffer<T> tmp(in.size(), T(0)), out(in.size(), T(0));
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j) {
        T acc = 0;
        for (int o = -radius_; o <= radius_; ++o) acc += taps_[o + radius_] * in[i * w_ + reflect(j + o, w_)];
        tmp[i * w_ + j] = acc;
      }
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j) {
        T acc = 0;
        for (int o = -radius_; o <= radius_; ++o) acc += taps_[o + radius_] * tmp[reflect(i + o, h_) * w_ + j];
        out[i * w_ + j] = acc;
      }
    return out;
  }

  Buffer<T> adjoint(const Buffer<T>& g) const {
    Buffer<T> tmp(g.size(), T(0)), out(g.size(), T(0));
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j)
        for (int o = -radius_; o <= radius_; ++o)
          tmp[reflect(i + o, h_) * w_ + j] += taps_[o + radius_] * g[i * w_ + j];
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j)
        for (int o = -radius_; o <= radius_; ++o)
          out[i * w_ + reflect(j + o, w_)] += taps_[o + radius_] * tmp[i * w_ + j];
    return out;
  }

 private:
  int h_, w_, radius_ = 0;
  std::vector<T> taps_;
};

template <typename T>
struct SsimStats {
  Buffer<T> mx, my, exx, eyy, exy, s;
};

template <typename T>
SsimStats<T> ssim_stats(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p,
                        const GaussianFilter<T>& f) {
  const std::size_t n = x.size();
  Buffer<T> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x.data[i] * x.data[i];
    yy[i] = y.data[i] * y.data[i];
    xy[i] = x.data[i] * y.data[i];
  }
  SsimStats<T> st{f.apply(x.data), f.apply(y.data), f.apply(xx), f.apply(yy), f.apply(xy), {}};
  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  st.s.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T mx = st.mx[i], my = st.my[i];
    const T sxx = st.exx[i] - mx * mx, syy = st.eyy[i] - my * my, sxy = st.exy[i] - mx * my;
    st.s[i] = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  }
  return st;
}

template <typename T>
void check_ssim_inputs(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p) {
  p.validate();
  require_same_shape(x, y, "ssim");
  if (x.c != 1) throw ShapeError("ssim expects single-channel images");
}

}  // namespace

template <typename T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params) {
  check_ssim_inputs(x, y, params);
  const GaussianFilter<T> f(params, x.h, x.w);
  auto st = ssim_stats(x, y, params, f);
  Tensor<T> out(1, x.h, x.w);
  out.data = std::move(st.s);
  return out;
}

template <typename T>
T ssim_loss(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params) {
  const Tensor<T> m = ssim_map(x, y, params);
  T acc = 0;
  for (T v : m.data) acc += T(1) - v;
  return acc / static_cast<T>(m.size());
}

template <typename T>
T ssim_loss_grad(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params, Tensor<T>& dx) {
  check_ssim_inputs(x, y, params);
  const GaussianFilter<T> f(params, x.h, x.w);
  const auto st = ssim_stats(x, y, params, f);
  const std::size_t n = x.size();
  const T c1 = static_cast<T>(params.c1()), c2 = static_cast<T>(params.c2());
  const T d_s = T(-1) / static_cast<T>(n);
  Buffer<T> g_mx(n), g_exx(n), g_exy(n);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T mx = st.mx[i], my = st.my[i], s = st.s[i];
    loss += T(1) - s;
    const T a1 = 2 * mx * my + c1;
    const T a2 = 2 * (st.exy[i] - mx * my) + c2;
    const T b1 = mx * mx + my * my + c1;
    const T b2 = (st.exx[i] - mx * mx) + (st.eyy[i] - my * my) + c2;
    g_mx[i] = d_s * s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2);
    g_exx[i] = d_s * (-s / b2);
    g_exy[i] = d_s * (2 * s / a2);
  }
  const auto t_mx = f.adjoint(g_mx);
  const auto t_exx = f.adjoint(g_exx);
  const auto t_exy = f.adjoint(g_exy);
  dx = Tensor<T>(1, x.h, x.w);
  for (std::size_t i = 0; i < n; ++i) {
    dx.data[i] = t_mx[i] + 2 * x.data[i] * t_exx[i] + y.data[i] * t_exy[i];
  }
  return loss / static_cast<T>(n);
}

double binary_cross_entropy(int y, double y_hat) {
  const double p = std::clamp(y_hat, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

double binary_cross_entropy_grad(int y, double y_hat) {
  if (y_hat < kProbClamp || y_hat > 1.0 - kProbClamp) return 0.0;
  return -(y / y_hat) + (1 - y) / (1.0 - y_hat);
}

template <typename T>
double l2_penalty(const ParamSet<T>& params) {
  double acc = 0;
  for (const auto& p : params) {
    if (p.role != ParamRole::Weight) continue;
    for (T v : p.value) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return acc;
}

template <typename T>
void add_l2_grad(const ParamSet<T>& params, double scale, Gradients<T>& g) {
  if (scale == 0.0) return;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& p = params[static_cast<int>(i)];
    if (p.role != ParamRole::Weight) continue;
    for (std::size_t j = 0; j < p.value.size(); ++j) g[i][j] += static_cast<T>(2.0 * scale) * p.value[j];
  }
}

namespace {

template <typename T>
LossBreakdown composite_impl(const ForwardOutput<T>& out, const Tensor<T>& current, int label,
                             const UfcnModel<T>& model, const SsimParams& ssim,
                             const LossWeights& weights, OutputGrads<T>* grads) {
  weights.validate();
  if (label != 0 && label != 1) throw ConfigError("label must be 0 or 1");
  LossBreakdown lb;
  if (grads) {
    lb.recons = static_cast<double>(ssim_loss_grad(out.reconstruction, current, ssim, grads->d_reconstruction));
    grads->d_y_hat_per_layer.assign(out.y_hat_per_layer.size(), T(0));
  } else {
    lb.recons = static_cast<double>(ssim_loss(out.reconstruction, current, ssim));
  }
  for (std::size_t l = 0; l < out.y_hat_per_layer.size(); ++l) {
    const double yh = static_cast<double>(out.y_hat_per_layer[l]);
    lb.prob += binary_cross_entropy(label, yh);
    if (grads) {
      grads->d_y_hat_per_layer[l] = static_cast<T>(weights.lambda1 * binary_cross_entropy_grad(label, yh));
    }
  }
  const double yb = static_cast<double>(out.y_hat_bam);
  lb.prob += binary_cross_entropy(label, yb);
  if (grads) grads->d_y_hat_bam = static_cast<T>(weights.lambda1 * binary_cross_entropy_grad(label, yb));
  lb.l2 = l2_penalty(model.params());
  lb.total = lb.recons + weights.lambda1 * lb.prob + weights.lambda2 * lb.l2;
  return lb;
}

}  // namespace

template <typename T>
LossBreakdown composite_loss(const ForwardOutput<T>& output, const Tensor<T>& current, int label,
                             const UfcnModel<T>& model, const SsimParams& ssim,
                             const LossWeights& weights) {
  return composite_impl<T>(output, current, label, model, ssim, weights, nullptr);
}

template <typename T>
LossBreakdown composite_loss_grad(const ForwardOutput<T>& output, const Tensor<T>& current,
                                  int label, const UfcnModel<T>& model, const SsimParams& ssim,
                                  const LossWeights& weights, OutputGrads<T>& grads) {
  return composite_impl(output, current, label, model, ssim, weights, &grads);
}

template <typename T>
T dice_loss(std::span<const T> s, std::span<const T> r, double eps) {
  if (s.size() != r.size()) throw ShapeError("dice_loss: size mismatch");
  if (!(eps > 0)) throw ConfigError("dice_loss: epsilon must be > 0");
  double inter = 0, sum = 0, inter_bg = 0, sum_bg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = s[i], b = r[i];
    inter += a * b;
    sum += a + b;
    inter_bg += (1 - a) * (1 - b);
    sum_bg += 2 - a - b;
  }
  return static_cast<T>(1.0 - (2 * inter + eps) / (sum + eps) - (2 * inter_bg + eps) / (sum_bg + eps));
}

template <typename T>
T dice_loss_grad(std::span<const T> s, std::span<const T> r, double eps, std::span<T> ds) {
  if (s.size() != r.size() || ds.size() != s.size()) throw ShapeError("dice_loss: size mismatch");
  double inter = 0, sum = 0, inter_bg = 0, sum_bg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = s[i], b = r[i];
    inter += a * b;
    sum += a + b;
    inter_bg += (1 - a) * (1 - b);
    sum_bg += 2 - a - b;
  }
  const double num = 2 * inter + eps, den = sum + eps;
  const double num_bg = 2 * inter_bg + eps, den_bg = sum_bg + eps;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double b = r[i];
    // d/ds of -(num/den) and -(num_bg/den_bg)
    const double g_fg = -(2 * b * den - num) / (den * den);
    const double g_bg = -(-2 * (1 - b) * den_bg + num_bg) / (den_bg * den_bg);
    ds[i] = static_cast<T>(g_fg + g_bg);
  }
  return static_cast<T>(1.0 - num / den - num_bg / den_bg);
}

#define UFCN_INSTANTIATE_LOSSES(T)                                                              \
  template Tensor<T> ssim_map<T>(const Tensor<T>&, const Tensor<T>&, const SsimParams&);        \
  template T ssim_loss<T>(const Tensor<T>&, const Tensor<T>&, const SsimParams&);               \
  template T ssim_loss_grad<T>(const Tensor<T>&, const Tensor<T>&, const SsimParams&,           \
                               Tensor<T>&);                                                      \
  template double l2_penalty<T>(const ParamSet<T>&);                                            \
  template void add_l2_grad<T>(const ParamSet<T>&, double, Gradients<T>&);                      \
  template LossBreakdown composite_loss<T>(const ForwardOutput<T>&, const Tensor<T>&, int,      \
                                           const UfcnModel<T>&, const SsimParams&,              \
                                           const LossWeights&);                                 \
  template LossBreakdown composite_loss_grad<T>(const ForwardOutput<T>&, const Tensor<T>&, int, \
                                                const UfcnModel<T>&, const SsimParams&,         \
                                                const LossWeights&, OutputGrads<T>&);           \
  template T dice_loss<T>(std::span<const T>, std::span<const T>, double);                      \
  template T dice_loss_grad<T>(std::span<const T>, std::span<const T>, double, std::span<T>);

UFCN_INSTANTIATE_LOSSES(float)
UFCN_INSTANTIATE_LOSSES(double)

}  // namespace ufcn

#include "ufcn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace ufcn {

template <typename T>
AsgLayer<T> AsgLayer<T>::create(ParamSet<T>& ps, const std::string& name, int in_c, int diff_c,
                                int gate_c) {
  AsgLayer l;
  l.gate_c = gate_c;
  l.proj_e = ConvLayer<T>::create(ps, name + ".w_e", in_c, gate_c, 1);
  l.proj_d = ConvLayer<T>::create(ps, name + ".w_d", diff_c, gate_c, 1);
  l.proj_a = ConvLayer<T>::create(ps, name + ".w_a", gate_c, 1, 1);
  l.w_f = ps.add(name + ".w_f", {gate_c}, ParamRole::Weight, gate_c);
  l.b_f = ps.add(name + ".b_f", {1}, ParamRole::Bias);
  return l;
}

template <typename T>
const Tensor<T>& AsgLayer<T>::forward(const ParamSet<T>& ps, const Tensor<T>& upsampled,
                                      const Tensor<T>& diff, double threshold, double floor,
                                      AsgTrace<T>& t) const {
  if (upsampled.h != diff.h || upsampled.w != diff.w) {
    throw ShapeError("asg: decoder map " + shape_string(upsampled) + " vs difference map " +
                     shape_string(diff));
  }
  t.pe = proj_e.forward(ps, upsampled);
  t.pd = proj_d.forward(ps, diff);
  const std::size_t n = t.pe.size();
  t.prod = Tensor<T>(t.pe.c, t.pe.h, t.pe.w);
  t.q = Tensor<T>(t.pe.c, t.pe.h, t.pe.w);
  for (std::size_t i = 0; i < n; ++i) {
    t.prod.data[i] = t.pe.data[i] * t.pd.data[i];
    t.q.data[i] = t.prod.data[i] > T(0) ? t.prod.data[i] : T(0);
  }
  t.psi = proj_a.forward(ps, t.q);
  const std::size_t hw = t.psi.plane();
  t.gate = Tensor<T>(1, t.psi.h, t.psi.w);
  t.gate_eff = Tensor<T>(1, t.psi.h, t.psi.w);
  const T thr = static_cast<T>(threshold);
  const T fl = static_cast<T>(floor);
  for (std::size_t p = 0; p < hw; ++p) {
    const T s = sigmoid(t.psi.data[p]);
    t.gate.data[p] = s;
    t.gate_eff.data[p] = s < thr ? fl : s;
  }
  t.attention = Tensor<T>(gate_c, t.pe.h, t.pe.w);
  t.pooled.assign(gate_c, T(0));
  const auto& wf = ps[w_f].value;
  T logit = ps[b_f].value[0];
  for (int c = 0; c < gate_c; ++c) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      const T a = t.gate_eff.data[p] * t.pe.data[c * hw + p];
      t.attention.data[c * hw + p] = a;
      acc += a;
    }
    t.pooled[c] = acc / static_cast<T>(hw);
    logit += wf[c] * t.pooled[c];
  }
  t.logit = logit;
  t.y_hat = sigmoid(logit);
  return t.attention;
}

template <typename T>
void AsgLayer<T>::backward(const ParamSet<T>& ps, const Tensor<T>& upsampled,
                           const Tensor<T>& diff, const AsgTrace<T>& t, double threshold,
                           const Tensor<T>& d_attention, T d_yhat, Gradients<T>& g,
                           Tensor<T>& d_upsampled, Tensor<T>& d_diff) const {
  const std::size_t hw = t.gate.plane();
  const auto& wf = ps[w_f].value;
  const T d_logit = d_yhat * t.y_hat * (T(1) - t.y_hat);
  g[b_f][0] += d_logit;
  Tensor<T> dA = d_attention.empty() ? Tensor<T>(gate_c, t.pe.h, t.pe.w) : d_attention;
  for (int c = 0; c < gate_c; ++c) {
    g[w_f][c] += d_logit * t.pooled[c];
    const T spread = d_logit * wf[c] / static_cast<T>(hw);
    for (std::size_t p = 0; p < hw; ++p) dA.data[c * hw + p] += spread;
  }

  Tensor<T> d_pe(gate_c, t.pe.h, t.pe.w);
  Tensor<T> d_psi(1, t.pe.h, t.pe.w);
  const T thr = static_cast<T>(threshold);
  for (std::size_t p = 0; p < hw; ++p) {
    T d_gate = 0;
    for (int c = 0; c < gate_c; ++c) {
      d_pe.data[c * hw + p] = dA.data[c * hw + p] * t.gate_eff.data[p];
      d_gate += dA.data[c * hw + p] * t.pe.data[c * hw + p];
    }
    const T s = t.gate.data[p];
    d_psi.data[p] = s < thr ? T(0) : d_gate * s * (T(1) - s);
  }

  const Tensor<T> d_q = proj_a.backward(ps, t.q, d_psi, g);
  Tensor<T> d_pd(gate_c, t.pe.h, t.pe.w);
  for (std::size_t i = 0; i < d_q.size(); ++i) {
    const T d_prod = t.prod.data[i] >= T(0) ? d_q.data[i] : T(0);
    d_pe.data[i] += d_prod * t.pd.data[i];
    d_pd.data[i] = d_prod * t.pe.data[i];
  }
  d_upsampled = proj_e.backward(ps, upsampled, d_pe, g);
  d_diff = proj_d.backward(ps, diff, d_pd, g);
}

template <typename T>
void BamLayer<T>::forward(const ParamSet<T>& ps, const Tensor<T>& features, double tau,
                          double sharpness, bool upsample, BamTrace<T>& t) const {
  t.logits = head.forward(ps, features);
  t.prob_half = Tensor<T>(1, t.logits.h, t.logits.w);
  for (std::size_t i = 0; i < t.logits.size(); ++i) t.prob_half.data[i] = sigmoid(t.logits.data[i]);
  if (upsample) {
    kernels::upsample_bilinear2x_forward<T>(t.prob_half, t.prob);
  } else {
    t.prob = t.prob_half;
  }
  t.mask = Tensor<std::uint8_t>(1, t.prob.h, t.prob.w);
  const T thr = static_cast<T>(tau);
  for (std::size_t i = 0; i < t.prob.size(); ++i) t.mask.data[i] = t.prob.data[i] > thr ? 1 : 0;

  const T r = static_cast<T>(sharpness);
  const T m = *std::max_element(t.logits.data.begin(), t.logits.data.end());
  T acc = 0;
  for (T z : t.logits.data) acc += std::exp(r * (z - m));
  t.pooled_logit = m + std::log(acc / static_cast<T>(t.logits.size())) / r;
  t.y_hat = sigmoid(t.pooled_logit);
}

template <typename T>
Tensor<T> BamLayer<T>::backward(const ParamSet<T>& ps, const Tensor<T>& features,
                                const BamTrace<T>& t, double sharpness, T d_yhat,
                                Gradients<T>& g) const {
  const T d_pool = d_yhat * t.y_hat * (T(1) - t.y_hat);
  const T r = static_cast<T>(sharpness);
  const T m = *std::max_element(t.logits.data.begin(), t.logits.data.end());
  Tensor<T> dz(1, t.logits.h, t.logits.w);
  T total = 0;
  for (std::size_t i = 0; i < dz.size(); ++i) {
    dz.data[i] = std::exp(r * (t.logits.data[i] - m));
    total += dz.data[i];
  }
  for (auto& v : dz.data) v = d_pool * v / total;
  return head.backward(ps, features, dz, g);
}

template <typename T>
void init_params(ParamSet<T>& ps, std::uint64_t seed) {
  for (std::size_t i = 0; i < ps.count(); ++i) {
    auto& p = ps[static_cast<int>(i)];
    switch (p.role) {
      case ParamRole::Bias:
        std::fill(p.value.begin(), p.value.end(), T(0));
        break;
      case ParamRole::Beta:
        std::fill(p.value.begin(), p.value.end(), T(1));
        break;
      case ParamRole::Weight: {
        Rng rng(derive_seed(seed, i));
        const double bound = std::sqrt(6.0 / std::max(1, p.fan_in));
        for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
  }
}

template struct AsgLayer<float>;
template struct AsgLayer<double>;
template struct BamLayer<float>;
template struct BamLayer<double>;
template void init_params<float>(ParamSet<float>&, std::uint64_t);
template void init_params<double>(ParamSet<double>&, std::uint64_t);

}  // namespace ufcn

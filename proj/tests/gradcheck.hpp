#pragma once

// Central-difference gradient check of the composite loss over every
// parameter coordinate. Coordinates whose perturbation flips a
// non-differentiable decision (ReLU sign inside a gate, max-pool winner,
// gate threshold, ReLU/TiLU kink of an activation) are skipped. Relative
// errors use max(|a|, |n|, abs_floor) as denominator; abs_floor sits well
// above the round-off of a central difference at h = 1e-5.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ufcn/losses.hpp"

namespace ufcn::test {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst_param;
};

inline void append_kinks(std::vector<char>& sig, const Tensor<double>& x, ActivationKind kind, double floor) {
  if (kind == ActivationKind::Silu) return;
  const double k = kind == ActivationKind::Relu ? 0.0 : floor;
  for (double v : x.data) sig.push_back(v >= k);
}

inline std::vector<char> kink_signature(const UfcnTrace<double>& t, const ModelConfig& cfg) {
  std::vector<char> sig;
  const auto kind = cfg.activation;
  const double fl = cfg.tilu_floor;
  for (const auto* enc : {&t.enc_current, &t.enc_prior})
    for (const auto& e : *enc) {
      for (int a : e.pool_argmax) sig.push_back(static_cast<char>(a & 3));
      append_kinks(sig, e.h1, kind, fl);
      append_kinks(sig, e.f, kind, fl);
    }
  append_kinks(sig, t.bn_h, kind, fl);
  for (const auto& d : t.dec) {
    for (double v : d.asg.prod.data) sig.push_back(v >= 0);
    for (double v : d.asg.gate.data) sig.push_back(v < cfg.asg_threshold);
    append_kinks(sig, d.h1, kind, fl);
    append_kinks(sig, d.h2, kind, fl);
  }
  return sig;
}

inline GradCheckResult gradient_check(UfcnModel<double>& model, const Tensor<double>& cur,
                                      const Tensor<double>& pri, int label, const SsimParams& sp,
                                      const LossWeights& lw, double h = 1e-5,
                                      double abs_floor = 1e-5) {
  UfcnTrace<double> trace;
  const auto out = model.forward_traced(cur, pri, trace);
  OutputGrads<double> og;
  composite_loss_grad(out, cur, label, model, sp, lw, og);
  auto g = model.params().zeros_like();
  model.backward(trace, og, g);
  add_l2_grad(model.params(), lw.lambda2, g);
  const auto base_sig = kink_signature(trace, model.config());

  auto eval = [&](std::vector<char>& sig) {
    UfcnTrace<double> t;
    const auto o = model.forward_traced(cur, pri, t);
    sig = kink_signature(t, model.config());
    return composite_loss(o, cur, label, model, sp, lw).total;
  };

  GradCheckResult res;
  auto& ps = model.params();
  for (std::size_t i = 0; i < ps.count(); ++i) {
    auto& p = ps[static_cast<int>(i)];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double orig = p.value[j];
      std::vector<char> sp_sig, sm_sig;
      p.value[j] = orig + h;
      const double lp = eval(sp_sig);
      p.value[j] = orig - h;
      const double lm = eval(sm_sig);
      p.value[j] = orig;
      if (sp_sig != base_sig || sm_sig != base_sig) {
        ++res.skipped;
        continue;
      }
      const double fd = (lp - lm) / (2 * h);
      const double an = g[i][j];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), abs_floor});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p.name + "[" + std::to_string(j) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace ufcn::test

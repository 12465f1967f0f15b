#include "ufcn/evaluation.hpp"

#include <algorithm>
#include <cstdio>

#include "ufcn/losses.hpp"

namespace ufcn {

using nlohmann::json;

double dice_score(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("dice_score: " + shape_string(pred) + " vs " + shape_string(gt));
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np == 0 || ng == 0) return 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double activation_fraction(const Tensor<std::uint8_t>& mask) {
  if (mask.empty()) throw ShapeError("activation_fraction: empty mask");
  const auto n = std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; });
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

CaseResult classify_case(const Tensor<std::uint8_t>& avm_mask, const MammogramPair& pair) {
  CaseResult r;
  r.id = pair.id;
  r.label = pair.label;
  r.lesion_kind = pair.lesion_kind;
  r.activation_fraction = activation_fraction(avm_mask);
  if (pair.label == 1) {
    if (!pair.gt_mask) throw EvaluationError("cancer case '" + pair.id + "' has no ground-truth mask");
    r.dice = dice_score(avm_mask, *pair.gt_mask);
    (*r.dice > kDetectionDiceThreshold ? r.tp : r.fn) = 1;
  } else {
    (r.activation_fraction < kNormalActivationThreshold ? r.tn : r.fp) = 1;
  }
  return r;
}

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0) return std::nullopt;
  return num / den;
}

// Sorted summation makes the mean independent of case order.
std::optional<double> sorted_mean(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

EvalReport aggregate(const std::vector<CaseResult>& results) {
  EvalReport rep;
  rep.cases = results;
  std::map<LesionKind, std::vector<double>> dices;
  for (LesionKind k : {LesionKind::Mass, LesionKind::Calc, LesionKind::Ad}) {
    rep.per_kind[k];
    dices[k];
  }
  for (const auto& c : results) {
    if (c.tp + c.tn + c.fp + c.fn != 1) throw EvaluationError("case '" + c.id + "' is not classified exactly once");
    rep.tp += c.tp;
    rep.tn += c.tn;
    rep.fp += c.fp;
    rep.fn += c.fn;
    if (c.label == 1) {
      auto& ks = rep.per_kind[c.lesion_kind];
      ks.cases++;
      ks.detected += c.tp;
      if (c.dice) dices[c.lesion_kind].push_back(*c.dice);
    } else {
      rep.normals++;
    }
  }
  for (auto& [kind, ks] : rep.per_kind) {
    ks.mean_dice = sorted_mean(dices[kind]);
    ks.cdr = ratio(ks.detected, ks.cases);
  }
  rep.ndr = ratio(rep.tn, rep.normals);
  rep.accuracy = ratio(rep.tp + rep.tn, static_cast<double>(results.size()));
  rep.sensitivity = ratio(rep.tp, rep.tp + rep.fn);
  rep.precision = ratio(rep.tp, rep.tp + rep.fp);
  if (rep.sensitivity && rep.precision) rep.f1 = ratio(2 * *rep.precision * *rep.sensitivity, *rep.precision + *rep.sensitivity);
  return rep;
}

EvalReport evaluate_model(const UfcnModel<float>& model, const std::vector<MammogramPair>& pairs,
                          const SsimParams* ssim) {
  if (pairs.empty()) throw EvaluationError("nothing to evaluate: empty split");
  const int n = static_cast<int>(pairs.size());
  std::vector<CaseResult> results(n);
  std::vector<double> ssims(n, 0.0);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      const auto out = model.forward(pairs[i].current, pairs[i].prior);
      results[i] = classify_case(out.avm_mask, pairs[i]);
      if (ssim) ssims[i] = 1.0 - static_cast<double>(ssim_loss(out.reconstruction, pairs[i].current, *ssim));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw EvaluationError("case '" + pairs[i].id + "': " + errors[i]);
  }
  EvalReport rep = aggregate(results);
  if (ssim) rep.mean_recon_ssim = sorted_mean(ssims);
  return rep;
}

EvalReport evaluate_model(const UnetModel<float>& model, const std::vector<MammogramPair>& pairs) {
  if (pairs.empty()) throw EvaluationError("nothing to evaluate: empty split");
  const int n = static_cast<int>(pairs.size());
  std::vector<CaseResult> results(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      results[i] = classify_case(model.predict_mask(pairs[i].current), pairs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw EvaluationError("case '" + pairs[i].id + "': " + errors[i]);
  }
  return aggregate(results);
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json("undefined"); }

std::string cell(const std::optional<double>& v) {
  if (!v) return "undef";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

}  // namespace

json report_to_json(const EvalReport& r) {
  json kinds = json::object();
  for (const auto& [kind, ks] : r.per_kind) {
    kinds[to_string(kind)] = {{"cases", ks.cases}, {"detected", ks.detected}, {"mean_dice", opt(ks.mean_dice)},
                              {"cdr", opt(ks.cdr)}};
  }
  json cases = json::array();
  for (const auto& c : r.cases) {
    cases.push_back({{"id", c.id},
                     {"label", c.label},
                     {"lesion_kind", to_string(c.lesion_kind)},
                     {"dice", c.dice ? json(*c.dice) : json(nullptr)},
                     {"activation_fraction", c.activation_fraction},
                     {"tp", c.tp},
                     {"tn", c.tn},
                     {"fp", c.fp},
                     {"fn", c.fn}});
  }
  json j{{"per_kind", kinds},
         {"normal", {{"cases", r.normals}, {"detected", r.tn}, {"ndr", opt(r.ndr)}}},
         {"confusion", {{"tp", r.tp}, {"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}}},
         {"accuracy", opt(r.accuracy)},
         {"sensitivity", opt(r.sensitivity)},
         {"precision", opt(r.precision)},
         {"f1", opt(r.f1)},
         {"cases", cases}};
  if (r.mean_recon_ssim) j["mean_recon_ssim"] = *r.mean_recon_ssim;
  return j;
}

std::string render_tables(const EvalReport& r) {
  const auto& ad = r.per_kind.at(LesionKind::Ad);
  const auto& mass = r.per_kind.at(LesionKind::Mass);
  const auto& calc = r.per_kind.at(LesionKind::Calc);
  std::string s;
  s += "Localization and detection rate\n";
  s += "        AD Dice   AD cDR  Mass Dice Mass cDR  Cals Dice Cals cDR  Normal nDR\n";
  s += pad(cell(ad.mean_dice), 10) + pad(cell(ad.cdr), 9) + pad(cell(mass.mean_dice), 11) + pad(cell(mass.cdr), 9) +
       pad(cell(calc.mean_dice), 11) + pad(cell(calc.cdr), 9) + pad(cell(r.ndr), 12) + "\n\n";
  s += "Cancer and normal detection\n";
  s += "  Accuracy Sensitivity Precision        F1\n";
  s += pad(cell(r.accuracy), 10) + pad(cell(r.sensitivity), 12) + pad(cell(r.precision), 10) + pad(cell(r.f1), 10) +
       "\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "\nTP %d  TN %d  FP %d  FN %d  (%zu cases)\n", r.tp, r.tn, r.fp, r.fn, r.cases.size());
  s += buf;
  return s;
}

}  // namespace ufcn

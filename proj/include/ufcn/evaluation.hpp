#pragma once

#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "ufcn/data.hpp"
#include "ufcn/losses.hpp"
#include "ufcn/unet.hpp"

namespace ufcn {

inline constexpr double kDetectionDiceThreshold = 0.01;
inline constexpr double kNormalActivationThreshold = 0.01;

// 2|P∩G| / (|P|+|G|); 0 when either side is empty.
double dice_score(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt);
// Fraction of nonzero pixels.
double activation_fraction(const Tensor<std::uint8_t>& mask);

struct CaseResult {
  std::string id;
  int label = 0;
  LesionKind lesion_kind = LesionKind::None;
  std::optional<double> dice;  // cancer cases only
  double activation_fraction = 0;
  int tp = 0, tn = 0, fp = 0, fn = 0;
};

// Cancer: TP iff dice > 0.01, else FN. Normal: TN iff activation fraction
// < 0.01, else FP. Throws EvaluationError for a cancer case without mask.
CaseResult classify_case(const Tensor<std::uint8_t>& avm_mask, const MammogramPair& pair);

struct KindStats {
  int cases = 0;
  int detected = 0;
  std::optional<double> mean_dice;
  std::optional<double> cdr;
};

// Undefined ratios (empty denominators) are nullopt.
struct EvalReport {
  std::map<LesionKind, KindStats> per_kind;  // MASS, CALC, AD always present
  int normals = 0;
  std::optional<double> ndr;
  int tp = 0, tn = 0, fp = 0, fn = 0;
  std::optional<double> accuracy, sensitivity, precision, f1;
  std::optional<double> mean_recon_ssim;  // UFCN only
  std::vector<CaseResult> cases;
};

EvalReport aggregate(const std::vector<CaseResult>& results);

// Forwards every pair (already at the model's input size), classifies,
// aggregates. Cases are evaluated in parallel; the report order follows the
// input order.
EvalReport evaluate_model(const UfcnModel<float>& model, const std::vector<MammogramPair>& pairs,
                          const SsimParams* ssim = nullptr);
EvalReport evaluate_model(const UnetModel<float>& model, const std::vector<MammogramPair>& pairs);

nlohmann::json report_to_json(const EvalReport& report);
// Two text tables: per-kind Dice/cDR with nDR, and the detection metrics.
std::string render_tables(const EvalReport& report);

}  // namespace ufcn

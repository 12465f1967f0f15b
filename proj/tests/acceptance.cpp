// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// if any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eval_fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "ufcn/checkpoint.hpp"
#include "ufcn/evaluation.hpp"
#include "ufcn/phantom.hpp"
#include "ufcn/run_config.hpp"
#include "ufcn/training.hpp"

using namespace ufcn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt("%.4f", *v) : "undefined"; }

// ---- 1 -----------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  SsimParams sp;
  sp.window_size = 7;
  const LossWeights lw{1.0, 1e-3};
  double worst = 0;
  std::string worst_at;
  std::size_t checked = 0, skipped = 0;
  std::set<std::string> covered;
  for (int label : {0, 1}) {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.channel_widths = {2, 4};
    cfg.input_height = cfg.input_width = 8;
    cfg.init_seed = 11 + label;
    auto model = init_model<double>(cfg);
    const auto c = test::random_tensor<double>(1, 8, 8, 500 + label, 0.0, 1.0);
    const auto p = test::random_tensor<double>(1, 8, 8, 600 + label, 0.0, 1.0);
    const auto r = test::gradient_check(model, c, p, label, sp, lw);
    checked += r.checked;
    skipped += r.skipped;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_at = r.worst_param;
    }
    for (const auto& prm : model.params()) covered.insert(prm.name);
  }
  const double secs = seconds_since(t0);
  bool has_beta = false, has_wf = false, has_wv = false, has_asg = false;
  for (const auto& n : covered) {
    has_beta |= n.find("beta") != std::string::npos;
    has_wf |= n.find("w_f") != std::string::npos;
    has_wv |= n.find("bam.w_v") != std::string::npos;
    has_asg |= n.find("asg") != std::string::npos;
  }
  const bool pass = worst < 1e-5 && secs < 120 && checked > skipped && has_beta && has_wf && has_wv && has_asg;
  return {pass, "max rel err " + fmt("%.2e", worst) + " at " + worst_at + ", " + std::to_string(checked) +
                    " coords checked, " + std::to_string(skipped) + " at kinks, " + fmt("%.1f s", secs)};
}

// ---- 2 -----------------------------------------------------------------

Outcome ssim_oracle() {
  const SsimParams sp;
  double worst = 0, self = 0;
  for (int i = 0; i < 50; ++i) {
    const auto x = test::random_tensor<double>(1, 16, 16, 1000 + i, 0.0, 1.0);
    const auto y = test::random_tensor<double>(1, 16, 16, 2000 + i, 0.0, 1.0);
    worst = std::max(worst, std::abs(ssim_loss(x, y, sp) - test::ssim_loss_bruteforce(x, y, sp)));
    self = std::max(self, std::abs(ssim_loss(x, x, sp)));
  }
  return {worst <= 1e-6 && self <= 1e-12,
          "max |impl - brute force| " + fmt("%.2e", worst) + ", max |ssim_loss(x,x)| " + fmt("%.2e", self)};
}

// ---- 3 -----------------------------------------------------------------

Outcome identity_nullity() {
  ModelConfig cfg;
  cfg.input_height = cfg.input_width = 64;
  const auto model = init_model<double>(cfg);
  double worst = 0;
  std::size_t maps = 0;
  for (int s = 0; s < 20; ++s) {
    const auto x = test::random_tensor<double>(1, 64, 64, 3000 + s, 0.0, 1.0);
    const auto out = model.forward(x, x);
    for (const auto& d : out.difference) {
      for (double v : d.data) worst = std::max(worst, std::abs(v));
      ++maps;
    }
  }
  return {worst == 0.0 && maps == 20u * cfg.num_layers,
          "max |D_l| " + fmt("%.1e", worst) + " over " + std::to_string(maps) + " difference maps"};
}

// ---- 4 -----------------------------------------------------------------

Outcome metric_oracle() {
  std::vector<Tensor<std::uint8_t>> masks;
  std::vector<std::vector<int>> sets;
  for (int b = 0; b < 512; ++b) {
    masks.push_back(test::mask_from_bits(b));
    sets.emplace_back(masks.back().data.begin(), masks.back().data.end());
  }
  long dice_bad = 0, class_bad = 0;
  for (int a = 0; a < 512; ++a)
    for (int b = 0; b < 512; ++b) {
      const double want = test::dice_sets(sets[a], sets[b]);
      dice_bad += dice_score(masks[a], masks[b]) != want;
      if (b == 0) continue;
      const auto r = classify_case(masks[a], test::case_pair("x", 1, LesionKind::Mass, masks[b]));
      class_bad += (r.tp == 1) != (want > 0.01) || r.tp + r.fn != 1 || r.tn + r.fp != 0;
    }
  for (int a = 0; a < 512; ++a) {
    const auto r = classify_case(masks[a], test::case_pair("n", 0, LesionKind::None, masks[0]));
    const double frac = static_cast<double>(std::count(sets[a].begin(), sets[a].end(), 1)) / 9.0;
    class_bad += (r.tn == 1) != (frac < 0.01) || r.tn + r.fp != 1;
  }

  const auto cases = test::synthetic_cases(50, 77);
  std::vector<CaseResult> results;
  std::vector<test::TallyCase> raw;
  for (const auto& c : cases) {
    results.push_back(classify_case(c.pred, c.pair));
    raw.push_back(c.raw);
  }
  const auto rep = aggregate(results);
  const auto t = test::tally_oracle(raw);
  bool agg_ok = rep.tp == t.tp && rep.tn == t.tn && rep.fp == t.fp && rep.fn == t.fn && rep.normals == t.normals &&
                rep.accuracy && *rep.accuracy == static_cast<double>(t.tp + t.tn) / 50 && rep.sensitivity &&
                *rep.sensitivity == static_cast<double>(t.tp) / (t.tp + t.fn) && rep.precision &&
                *rep.precision == static_cast<double>(t.tp) / (t.tp + t.fp) && rep.ndr &&
                *rep.ndr == static_cast<double>(t.tn) / t.normals;
  for (int k = 1; k <= 3; ++k) {
    const auto& ks = rep.per_kind.at(static_cast<LesionKind>(k));
    agg_ok = agg_ok && t.kind_cases[k] > 0 && ks.cases == t.kind_cases[k] && ks.cdr &&
             *ks.cdr == static_cast<double>(t.kind_tp[k]) / t.kind_cases[k] && ks.mean_dice &&
             *ks.mean_dice == t.kind_dice_sum[k] / t.kind_cases[k];
  }
  return {dice_bad == 0 && class_bad == 0 && agg_ok,
          std::to_string(dice_bad) + " dice mismatches / 262144, " + std::to_string(class_bad) +
              " classification mismatches, 50-case tally " + (agg_ok ? "exact" : "differs") + " (TP " +
              std::to_string(rep.tp) + " TN " + std::to_string(rep.tn) + " FP " + std::to_string(rep.fp) + " FN " +
              std::to_string(rep.fn) + ")"};
}

// ---- 5 -----------------------------------------------------------------

Outcome loss_examples() {
  const double be = binary_cross_entropy(1, 0.5);
  const std::vector<double> s{1, 0, 1, 1, 0, 0, 1, 0};
  const double dl = dice_loss<double>(s, s, 1.0);

  ModelConfig cfg;
  cfg.num_layers = 3;
  cfg.channel_widths = {4, 8, 16};
  cfg.input_height = cfg.input_width = 32;
  const auto model = init_model<double>(cfg);
  SsimParams sp;
  const LossWeights lw{0.7, 1e-3};
  double worst_sum = 0;
  for (int i = 0; i < 10; ++i) {
    const auto c = test::random_tensor<double>(1, 32, 32, 4000 + i, 0.0, 1.0);
    const auto p = test::random_tensor<double>(1, 32, 32, 5000 + i, 0.0, 1.0);
    const auto lb = composite_loss(model.forward(c, p), c, i % 2, model, sp, lw);
    worst_sum = std::max(worst_sum, std::abs(lb.total - (lb.recons + lw.lambda1 * lb.prob + lw.lambda2 * lb.l2)));
  }
  const bool pass = std::abs(be - 0.693147) <= 1e-6 && std::abs(dl + 1.0) <= 1e-6 && worst_sum <= 1e-9;
  return {pass, "BE(1,0.5) " + fmt("%.7f", be) + ", dice_loss(s,s) " + fmt("%.9f", dl) +
                    ", max |total - term sum| " + fmt("%.1e", worst_sum)};
}

// ---- 6-9 ---------------------------------------------------------------

struct PipelineResult {
  EvalReport test;
  std::optional<double> val_ssim;
  double seconds = 0;
  std::string report_bytes;
};

struct BaselineResult {
  EvalReport test;
  std::string report_bytes;
};

DatasetManifest make_dataset(const RunConfig& rc, const fs::path& dir) {
  fs::remove_all(dir);
  write_dataset(rc.phantom, dir.string());
  return load_manifest((dir / "manifest.json").string());
}

PipelineResult run_ufcn(const RunConfig& rc, Variant variant, const fs::path& dir) {
  const auto t0 = Clock::now();
  const auto manifest = make_dataset(rc, dir / "data");
  TrainConfig tc = rc.train;
  tc.variant = variant;
  tc.checkpoint_dir = (dir / "run").string();
  tc.log_path = (dir / "run" / "train_log.jsonl").string();
  auto trained = train_ufcn(tc, rc.model, manifest, [&](const EpochRecord& e) {
    std::fprintf(stderr, "  [%s] epoch %2d total %.5f val %.5f ssim %.4f %.1fs\n", to_string(variant).c_str(),
                 e.epoch, e.total, e.val_total, e.val_ssim.value_or(0), e.wall_seconds);
  });
  const auto model = load_ufcn_checkpoint(trained.log.checkpoint_path);
  const int h = model.config().input_height, w = model.config().input_width;
  PipelineResult r;
  r.test = evaluate_model(model, load_eval_split(manifest, Split::Test, h, w), &tc.ssim);
  r.val_ssim = evaluate_model(model, load_eval_split(manifest, Split::Val, h, w), &tc.ssim).mean_recon_ssim;
  r.seconds = seconds_since(t0);
  r.report_bytes = report_to_json(r.test).dump(2);
  std::ofstream(dir / "report.json") << r.report_bytes << "\n";
  return r;
}

BaselineResult run_baseline(const RunConfig& rc, const fs::path& dir) {
  const auto manifest = make_dataset(rc, dir / "data");
  TrainConfig tc = rc.train;
  tc.variant = Variant::BaselineUnet;
  tc.checkpoint_dir = (dir / "run").string();
  tc.log_path = (dir / "run" / "train_log.jsonl").string();
  auto trained = train_baseline_unet(tc, rc.unet, manifest, [&](const EpochRecord& e) {
    std::fprintf(stderr, "  [unet] epoch %2d dice loss %.5f val dice %.4f %.1fs\n", e.epoch, e.total,
                 e.val_dice.value_or(0), e.wall_seconds);
  });
  const auto model = load_unet_checkpoint(trained.log.checkpoint_path);
  BaselineResult r;
  r.test = evaluate_model(model, load_eval_split(manifest, Split::Test, rc.unet.input_height, rc.unet.input_width));
  r.report_bytes = report_to_json(r.test).dump(2);
  std::ofstream(dir / "report.json") << r.report_bytes << "\n";
  return r;
}

Outcome end_to_end(const PipelineResult& r) {
  const auto& mass = r.test.per_kind.at(LesionKind::Mass);
  const bool pass = mass.mean_dice && *mass.mean_dice >= 0.45 && mass.cdr && *mass.cdr >= 0.7 && r.test.ndr &&
                    *r.test.ndr >= 0.5 && r.val_ssim && *r.val_ssim >= 0.7 && r.seconds <= 1800;
  return {pass, "mass Dice " + opt(mass.mean_dice) + " (>= 0.45), mass cDR " + opt(mass.cdr) + " (>= 0.7), nDR " +
                    opt(r.test.ndr) + " (>= 0.5), val SSIM " + opt(r.val_ssim) + " (>= 0.7), " +
                    fmt("%.0f s", r.seconds) + " (<= 1800)"};
}

Outcome baseline_contrast(const PipelineResult& u, const BaselineResult& b) {
  const bool pass = u.test.ndr && b.test.ndr && *u.test.ndr > *b.test.ndr;
  return {pass, "UFCN nDR " + opt(u.test.ndr) + " vs baseline U-Net nDR " + opt(b.test.ndr)};
}

// Minimum activation output over the encoder and decoder blocks, and the
// largest deviation from act(pre-activation).
struct ActivationAudit {
  double min_out = 1e300;
  double max_dev = 0;
};

ActivationAudit audit_activations(const UfcnModel<float>& model, std::uint64_t seed, int samples) {
  const auto& cfg = model.config();
  // the floor as the float model represents it
  const double floor = cfg.activation == ActivationKind::Tilu ? static_cast<float>(cfg.tilu_floor) : 0.0;
  ActivationAudit a;
  auto scan = [&](const Tensor<float>& pre, const Tensor<float>& post) {
    for (std::size_t i = 0; i < post.size(); ++i) {
      a.min_out = std::min(a.min_out, static_cast<double>(post.data[i]));
      const double want = std::max(floor, static_cast<double>(pre.data[i]));
      a.max_dev = std::max(a.max_dev, std::abs(static_cast<double>(post.data[i]) - want));
    }
  };
  for (int s = 0; s < samples; ++s) {
    const auto c = test::random_tensor<float>(1, cfg.input_height, cfg.input_width, seed + 2 * s, 0.0, 1.0);
    const auto p = test::random_tensor<float>(1, cfg.input_height, cfg.input_width, seed + 2 * s + 1, 0.0, 1.0);
    UfcnTrace<float> t;
    model.forward_traced(c, p, t);
    for (const auto* branch : {&t.enc_current, &t.enc_prior})
      for (const auto& e : *branch) {
        scan(e.h1, e.a1);
        scan(e.f, e.a);
      }
    for (const auto& d : t.dec) {
      scan(d.h1, d.a1);
      scan(d.h2, d.out);
    }
  }
  return a;
}

Outcome variant_wiring(const RunConfig& rc, const PipelineResult& base, const fs::path& work) {
  std::string detail;
  bool pass = true;

  const auto tilu = audit_activations(init_model<float>([&] {
                                        ModelConfig m = rc.model;
                                        m.activation = ActivationKind::Tilu;
                                        return m;
                                      }()),
                                      7000, 5);
  const double lam = static_cast<float>(rc.model.tilu_floor);
  pass = pass && tilu.min_out >= lam && tilu.max_dev == 0.0;
  detail += "TiLU min " + fmt("%.4g", tilu.min_out) + " (floor " + fmt("%.4g", lam) + ")";

  const auto relu = audit_activations(init_model<float>([&] {
                                        ModelConfig m = rc.model;
                                        m.activation = ActivationKind::Relu;
                                        return m;
                                      }()),
                                      8000, 5);
  pass = pass && relu.min_out >= 0.0 && relu.max_dev == 0.0;
  detail += ", ReLU max |out - relu(in)| " + fmt("%.1e", relu.max_dev);

  const bool ufcn_ok = base.test.cases.size() > 0;
  detail += std::string(", UFCN ") + (ufcn_ok ? "ok" : "failed");
  pass = pass && ufcn_ok;
  for (Variant v : {Variant::UfcnT, Variant::UfcnR}) {
    try {
      const auto r = run_ufcn(rc, v, work / to_string(v));
      const auto& mass = r.test.per_kind.at(LesionKind::Mass);
      detail += ", " + to_string(v) + " ok (mass Dice " + opt(mass.mean_dice) + ", nDR " + opt(r.test.ndr) + ")";
    } catch (const std::exception& e) {
      pass = false;
      detail += ", " + to_string(v) + " failed: " + e.what();
    }
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ufcn acceptance run"};
  std::string config_path, work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--config", config_path, "run config for criteria 6-9")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
  const RunConfig rc = load_run_config(config_path);
  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  if (selected.count(1)) report(1, "gradient correctness", gradient_correctness);
  if (selected.count(2)) report(2, "SSIM oracle", ssim_oracle);
  if (selected.count(3)) report(3, "identity-pair nullity", identity_nullity);
  if (selected.count(4)) report(4, "metric oracle", metric_oracle);
  if (selected.count(5)) report(5, "loss-term examples", loss_examples);

  const bool need_ufcn = selected.count(6) || selected.count(7) || selected.count(8) || selected.count(9);
  const bool need_unet = selected.count(7) || selected.count(9);
  std::optional<PipelineResult> ufcn_run;
  std::optional<BaselineResult> unet_run;
  std::string ufcn_error, unet_error;
  if (need_ufcn) {
    try {
      ufcn_run = run_ufcn(rc, Variant::Ufcn, work / "ufcn");
    } catch (const std::exception& e) {
      ufcn_error = e.what();
    }
  }
  if (need_unet) {
    try {
      unet_run = run_baseline(rc, work / "unet");
    } catch (const std::exception& e) {
      unet_error = e.what();
    }
  }
  auto need = [&](bool ufcn, bool unet) {
    if (ufcn && !ufcn_run) throw std::runtime_error("UFCN pipeline failed: " + ufcn_error);
    if (unet && !unet_run) throw std::runtime_error("baseline pipeline failed: " + unet_error);
  };

  if (selected.count(6)) report(6, "end-to-end synthetic", [&] {
      need(true, false);
      return end_to_end(*ufcn_run);
    });
  if (selected.count(7)) report(7, "baseline nDR contrast", [&] {
      need(true, true);
      return baseline_contrast(*ufcn_run, *unet_run);
    });
  if (selected.count(8)) report(8, "variant wiring", [&] {
      need(true, false);
      return variant_wiring(rc, *ufcn_run, work);
    });
  if (selected.count(9)) report(9, "reproducibility", [&] {
      need(true, true);
      const auto u2 = run_ufcn(rc, Variant::Ufcn, work / "ufcn_rerun");
      const auto b2 = run_baseline(rc, work / "unet_rerun");
      const bool same_u = u2.report_bytes == ufcn_run->report_bytes;
      const bool same_b = b2.report_bytes == unet_run->report_bytes;
      return Outcome{same_u && same_b, std::string("UFCN report ") + (same_u ? "identical" : "differs") + " (" +
                                           std::to_string(u2.report_bytes.size()) + " bytes), baseline report " +
                                           (same_b ? "identical" : "differs") + " (" +
                                           std::to_string(b2.report_bytes.size()) + " bytes)"};
    });

  return failures == 0 ? 0 : 1;
}

#include "ufcn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ufcn/checkpoint.hpp"
#include "ufcn/evaluation.hpp"
#include "ufcn/run_config.hpp"

namespace ufcn {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ufcn: return "ufcn";
    case Variant::UfcnT: return "ufcn-t";
    case Variant::UfcnR: return "ufcn-r";
    case Variant::BaselineUnet: return "unet";
  }
  return "ufcn";
}

Variant variant_from_string(const std::string& s) {
  if (s == "ufcn" || s == "UFCN") return Variant::Ufcn;
  if (s == "ufcn-t" || s == "UFCN_T") return Variant::UfcnT;
  if (s == "ufcn-r" || s == "UFCN_R") return Variant::UfcnR;
  if (s == "unet" || s == "BASELINE_UNET") return Variant::BaselineUnet;
  throw ConfigError("unknown variant '" + s + "' (expected ufcn, ufcn-t, ufcn-r or unet)");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Plateau ? "PLATEAU" : "STEP"; }

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "PLATEAU") return LrSchedule::Plateau;
  if (s == "STEP") return LrSchedule::Step;
  throw ConfigError("unknown lr_schedule '" + s + "' (expected PLATEAU or STEP)");
}

ActivationKind variant_activation(Variant v) {
  switch (v) {
    case Variant::UfcnT: return ActivationKind::Tilu;
    case Variant::UfcnR:
    case Variant::BaselineUnet: return ActivationKind::Relu;
    case Variant::Ufcn: break;
  }
  return ActivationKind::Silu;
}

void TrainConfig::validate() const {
  if (!(initial_lr >= 1e-5 && initial_lr <= 1e-2)) throw ConfigError("initial_lr must lie in [1e-5, 1e-2]");
  if (baseline_lr != 0 && !(baseline_lr >= 1e-5 && baseline_lr <= 1e-2)) {
    throw ConfigError("baseline_lr must be 0 or lie in [1e-5, 1e-2]");
  }
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau_factor must lie in (0,1)");
  if (plateau_patience < 0) throw ConfigError("plateau_patience must be >= 0");
  if (!(plateau_min_lr >= 0)) throw ConfigError("plateau_min_lr must be >= 0");
  if (!(step_factor > 0 && step_factor <= 1)) throw ConfigError("step_factor must lie in (0,1]");
  for (std::size_t i = 0; i < step_epochs.size(); ++i) {
    if (step_epochs[i] <= 0 || (i && step_epochs[i] <= step_epochs[i - 1])) {
      throw ConfigError("step_epochs must be positive and increasing");
    }
  }
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0)) {
    throw ConfigError("adam moments must lie in [0,1) and eps must be > 0");
  }
  if (!(dice_eps > 0)) throw ConfigError("dice_eps must be > 0");
  loss.validate();
  ssim.validate();
}

Adam::Adam(const AdamParams& p, const std::vector<std::size_t>& sizes) : p_(p) {
  for (std::size_t n : sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void Adam::step(ParamSet<float>& params, const Gradients<float>& g, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& w = params[static_cast<int>(i)].value;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& gi = g[i];
    bool finite = true;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = gi[j];
      m[j] = p_.beta1 * m[j] + (1 - p_.beta1) * gj;
      v[j] = p_.beta2 * v[j] + (1 - p_.beta2) * gj * gj;
      const double upd = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + p_.eps);
      w[j] = static_cast<float>(w[j] - upd);
      finite = finite && std::isfinite(w[j]);
    }
    if (!finite) {
      throw NumericalError("optimizer step produced non-finite values in '" + params[static_cast<int>(i)].name + "'");
    }
  }
}

double PlateauScheduler::step(double metric) {
  if (metric < best_) {
    best_ = metric;
    bad_ = 0;
  } else if (++bad_ > patience_) {
    lr_ = std::max(min_lr_, lr_ * factor_);
    bad_ = 0;
  }
  return lr_;
}

double StepScheduler::step(int completed_epoch) {
  for (int m : milestones_)
    if (m == completed_epoch) lr_ *= factor_;
  return lr_;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<int> shuffled(int n, std::uint64_t seed) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  return order;
}

void zero(Gradients<float>& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.0f);
}

class LrController {
 public:
  explicit LrController(const TrainConfig& c)
      : kind_(c.lr_schedule),
        plateau_(c.initial_lr, c.plateau_factor, c.plateau_patience, c.plateau_min_lr),
        step_(c.initial_lr, c.step_epochs, c.step_factor) {}
  double lr() const { return kind_ == LrSchedule::Plateau ? plateau_.lr() : step_.lr(); }
  void end_epoch(int epoch, double metric) {
    if (kind_ == LrSchedule::Plateau) {
      plateau_.step(metric);
    } else {
      step_.step(epoch);
    }
  }

 private:
  LrSchedule kind_;
  PlateauScheduler plateau_;
  StepScheduler step_;
};

// Opens the JSONL log (truncating) and the checkpoint directory.
struct RunOutputs {
  std::ofstream log;
  std::string best_path;

  explicit RunOutputs(const TrainConfig& c) {
    namespace fs = std::filesystem;
    if (!c.checkpoint_dir.empty()) {
      std::error_code ec;
      fs::create_directories(c.checkpoint_dir, ec);
      if (!fs::is_directory(c.checkpoint_dir)) throw Error("cannot create checkpoint dir '" + c.checkpoint_dir + "'");
      best_path = (fs::path(c.checkpoint_dir) / "best.ckpt").string();
    }
    if (!c.log_path.empty()) {
      log.open(c.log_path, std::ios::trunc);
      if (!log) throw Error("cannot write training log '" + c.log_path + "'");
    }
  }

  void write(const EpochRecord& r) {
    if (log.is_open()) log << epoch_record_json(r) << '\n' << std::flush;
  }
};

void check_finite(double v, const char* term, int epoch, const std::string& id) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + term + " loss at epoch " + std::to_string(epoch) + " on pair '" +
                         id + "'");
  }
}

template <typename Pair>
void require_size(const std::vector<Pair>& pairs, int h, int w, const char* what) {
  for (const auto& p : pairs) {
    const auto& img = [&]() -> const Tensor<float>& {
      if constexpr (std::is_same_v<Pair, SupervisedPair>) {
        return p.image;
      } else {
        return p.current;
      }
    }();
    if (img.h != h || img.w != w) {
      throw ShapeError(std::string(what) + " pair '" + p.id + "' is " + shape_string(img) + ", model expects " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
  }
}

Tensor<float> mask_to_float(const Tensor<std::uint8_t>& m) {
  Tensor<float> t(m.c, m.h, m.w);
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m.data[i] ? 1.0f : 0.0f;
  return t;
}

}  // namespace

UfcnTrainResult train_ufcn(const TrainConfig& config, const ModelConfig& model_config,
                           const std::vector<TrainingPair>& train, const std::vector<TrainingPair>& val,
                           const EpochCallback& on_epoch) {
  config.validate();
  if (config.variant == Variant::BaselineUnet) throw ConfigError("train_ufcn called with the unet variant");
  ModelConfig mc = model_config;
  mc.activation = variant_activation(config.variant);
  mc.validate();
  if (train.empty()) throw ConfigError("training split is empty");
  bool has_normal = false, has_cancer = false;
  for (const auto& p : train) (p.label == 1 ? has_cancer : has_normal) = true;
  if (!has_normal) throw ConfigError("training split has no normal pairs; normals are required");
  if (!has_cancer) throw ConfigError("training split has no cancer pairs");
  require_size(train, mc.input_height, mc.input_width, "training");
  require_size(val, mc.input_height, mc.input_width, "validation");

  UfcnModel<float> model = init_model<float>(mc);
  auto& ps = model.params();
  std::vector<std::size_t> sizes;
  for (const auto& p : ps) sizes.push_back(p.numel());
  Adam adam(config.adam, sizes);
  LrController sched(config);
  Gradients<float> g = ps.zeros_like();
  RunOutputs outputs(config);

  UfcnTrainResult result{model, {}};
  result.log.config_hash = config_hash(json{{"train", to_json(config)}, {"model", to_json(mc)}});
  result.log.checkpoint_path = outputs.best_path;
  double best_metric = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr();
    const auto order = shuffled(n, derive_seed(config.seed, 0x5EED0000ULL + epoch));
    const std::uint64_t aug_seed = derive_seed(config.seed, 0xA0600000ULL + epoch);
    for (int b0 = 0; b0 < n; b0 += config.batch_size) {
      const int b1 = std::min(n, b0 + config.batch_size);
      const float scale = 1.0f / static_cast<float>(b1 - b0);
      zero(g);
      double batch_total = 0;
      for (int k = b0; k < b1; ++k) {
        const TrainingPair& p = train[order[k]];
        Tensor<float> cur = p.current, pri = p.prior;
        if (config.augment) {
          Rng rng(derive_seed(aug_seed, static_cast<std::uint64_t>(order[k])));
          const Augmentation aug = sample_augmentation(rng);
          cur = augment_image(cur, aug);
          pri = augment_image(pri, aug);
        }
        UfcnTrace<float> trace;
        const auto out = model.forward_traced(cur, pri, trace);
        OutputGrads<float> og;
        const LossBreakdown lb = composite_loss_grad(out, cur, p.label, model, config.ssim, config.loss, og);
        check_finite(lb.recons, "recons", epoch, p.id);
        check_finite(lb.prob, "prob", epoch, p.id);
        check_finite(lb.l2, "l2", epoch, p.id);
        for (auto& v : og.d_reconstruction.data) v *= scale;
        for (auto& v : og.d_y_hat_per_layer) v *= scale;
        og.d_y_hat_bam *= scale;
        model.backward(trace, og, g);
        rec.total += lb.total;
        rec.recons += lb.recons;
        rec.prob += lb.prob;
        rec.l2 += lb.l2;
        batch_total += lb.total;
      }
      add_l2_grad(ps, config.loss.lambda2, g);
      adam.step(ps, g, sched.lr());
      rec.batch_losses.push_back(batch_total / (b1 - b0));
    }
    rec.total /= n;
    rec.recons /= n;
    rec.prob /= n;
    rec.l2 /= n;

    double metric = rec.total;
    if (!val.empty()) {
      const int nv = static_cast<int>(val.size());
      std::vector<double> totals(nv), recons(nv);
#pragma omp parallel for schedule(dynamic)
      for (int i = 0; i < nv; ++i) {
        const auto out = model.forward(val[i].current, val[i].prior);
        const LossBreakdown lb = composite_loss(out, val[i].current, val[i].label, model, config.ssim, config.loss);
        totals[i] = lb.total;
        recons[i] = lb.recons;
      }
      double st = 0, sr = 0;
      for (int i = 0; i < nv; ++i) {
        check_finite(totals[i], "validation total", epoch, val[i].id);
        st += totals[i];
        sr += recons[i];
      }
      rec.val_total = st / nv;
      rec.val_ssim = 1.0 - sr / nv;
      metric = rec.val_total;
    } else {
      rec.val_total = rec.total;
    }
    if (metric < best_metric) {
      best_metric = metric;
      rec.best = true;
      result.model = model;
      result.log.best_epoch = epoch;
      if (!outputs.best_path.empty()) save_checkpoint(model, outputs.best_path);
    }
    sched.end_epoch(epoch, metric);
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    outputs.write(rec);
    if (on_epoch) on_epoch(rec);
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

UfcnTrainResult train_ufcn(const TrainConfig& config, const ModelConfig& model_config,
                           const DatasetManifest& manifest, const EpochCallback& on_epoch) {
  const auto train = load_training_split(manifest, Split::Train, model_config.input_height, model_config.input_width);
  const auto val = load_training_split(manifest, Split::Val, model_config.input_height, model_config.input_width);
  return train_ufcn(config, model_config, train, val, on_epoch);
}

UnetTrainResult train_baseline_unet(const TrainConfig& base, const UnetConfig& unet_config,
                                    const std::vector<SupervisedPair>& train,
                                    const std::vector<SupervisedPair>& val, const EpochCallback& on_epoch) {
  base.validate();
  TrainConfig config = base;
  if (config.baseline_lr != 0) config.initial_lr = config.baseline_lr;
  unet_config.validate();
  if (train.empty()) throw ConfigError("supervised training set is empty (no cancer pairs with masks)");
  require_size(train, unet_config.input_height, unet_config.input_width, "training");
  require_size(val, unet_config.input_height, unet_config.input_width, "validation");

  UnetModel<float> model(unet_config);
  auto& ps = model.params();
  std::vector<std::size_t> sizes;
  for (const auto& p : ps) sizes.push_back(p.numel());
  Adam adam(config.adam, sizes);
  LrController sched(config);
  Gradients<float> g = ps.zeros_like();
  RunOutputs outputs(config);

  UnetTrainResult result{model, {}};
  result.log.config_hash = config_hash(json{{"train", to_json(config)}, {"unet", to_json(unet_config)}});
  result.log.checkpoint_path = outputs.best_path;
  double best_dice = -1;
  const int n = static_cast<int>(train.size());
  const std::size_t pix = static_cast<std::size_t>(unet_config.input_height) * unet_config.input_width;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr();
    const auto order = shuffled(n, derive_seed(config.seed, 0x5EED0000ULL + epoch));
    const std::uint64_t aug_seed = derive_seed(config.seed, 0xA0600000ULL + epoch);
    for (int b0 = 0; b0 < n; b0 += config.batch_size) {
      const int b1 = std::min(n, b0 + config.batch_size);
      const int bs = b1 - b0;
      std::vector<UnetTrace<float>> traces(bs);
      std::vector<float> s(pix * bs), r(pix * bs), ds(pix * bs);
      for (int k = 0; k < bs; ++k) {
        const SupervisedPair& p = train[order[b0 + k]];
        Tensor<float> img = p.image;
        Tensor<std::uint8_t> mask = p.mask;
        if (config.augment) {
          Rng rng(derive_seed(aug_seed, static_cast<std::uint64_t>(order[b0 + k])));
          const Augmentation aug = sample_augmentation(rng);
          img = augment_image(img, aug);
          mask = augment_mask(mask, aug);
        }
        const auto prob = model.forward_traced(img, traces[k]);
        std::copy(prob.data.begin(), prob.data.end(), s.begin() + k * pix);
        const auto mf = mask_to_float(mask);
        std::copy(mf.data.begin(), mf.data.end(), r.begin() + k * pix);
      }
      const double loss = dice_loss_grad<float>(s, r, config.dice_eps, ds);
      check_finite(loss, "dice", epoch, train[order[b0]].id);
      zero(g);
      for (int k = 0; k < bs; ++k) {
        Tensor<float> d(1, unet_config.input_height, unet_config.input_width);
        std::copy_n(ds.begin() + k * pix, pix, d.data.begin());
        model.backward(traces[k], d, g);
      }
      adam.step(ps, g, sched.lr());
      rec.batch_losses.push_back(loss);
      rec.total += loss * bs;
    }
    rec.total /= n;
    rec.recons = rec.total;

    double metric = -rec.total;  // higher is better
    if (!val.empty()) {
      const int nv = static_cast<int>(val.size());
      std::vector<double> dices(nv), losses(nv);
#pragma omp parallel for schedule(dynamic)
      for (int i = 0; i < nv; ++i) {
        const auto prob = model.forward(val[i].image);
        const auto mf = mask_to_float(val[i].mask);
        losses[i] = dice_loss<float>(prob.data, mf.data, config.dice_eps);
        Tensor<std::uint8_t> pred(1, prob.h, prob.w);
        for (std::size_t j = 0; j < prob.size(); ++j) pred.data[j] = prob.data[j] > unet_config.mask_threshold;
        dices[i] = dice_score(pred, val[i].mask);
      }
      double sd = 0, sl = 0;
      for (int i = 0; i < nv; ++i) {
        sd += dices[i];
        sl += losses[i];
      }
      rec.val_dice = sd / nv;
      rec.val_total = sl / nv;
      metric = *rec.val_dice;
    } else {
      rec.val_total = rec.total;
    }
    if (metric > best_dice) {
      best_dice = metric;
      rec.best = true;
      result.model = model;
      result.log.best_epoch = epoch;
      if (!outputs.best_path.empty()) save_checkpoint(model, outputs.best_path);
    }
    sched.end_epoch(epoch, rec.val_total);
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    outputs.write(rec);
    if (on_epoch) on_epoch(rec);
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

UnetTrainResult train_baseline_unet(const TrainConfig& config, const UnetConfig& unet_config,
                                    const DatasetManifest& manifest, const EpochCallback& on_epoch) {
  const auto train = load_supervised_split(manifest, Split::Train, unet_config.input_height, unet_config.input_width);
  const auto val = load_supervised_split(manifest, Split::Val, unet_config.input_height, unet_config.input_width);
  return train_baseline_unet(config, unet_config, train, val, on_epoch);
}

std::string epoch_record_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},   {"total", r.total}, {"recons", r.recons},       {"prob", r.prob},
         {"l2", r.l2},         {"val_total", r.val_total}, {"lr", r.lr},       {"best", r.best},
         {"wall_seconds", r.wall_seconds}};
  if (r.val_ssim) j["val_ssim"] = *r.val_ssim;
  if (r.val_dice) j["val_dice"] = *r.val_dice;
  return j.dump();
}

std::string train_summary(const TrainLog& log) {
  std::string s;
  char buf[256];
  double wall = 0;
  for (const auto& e : log.epochs) wall += e.wall_seconds;
  std::snprintf(buf, sizeof buf, "config %s: %zu epochs in %.1fs, best epoch %d\n", log.config_hash.c_str(),
                log.epochs.size(), wall, log.best_epoch);
  s += buf;
  if (!log.epochs.empty()) {
    const auto& last = log.epochs.back();
    std::snprintf(buf, sizeof buf, "final train total %.5f (recons %.5f, prob %.5f), val total %.5f, lr %.3g\n",
                  last.total, last.recons, last.prob, last.val_total, last.lr);
    s += buf;
  }
  if (!log.checkpoint_path.empty()) s += "checkpoint: " + log.checkpoint_path + "\n";
  return s;
}

}  // namespace ufcn

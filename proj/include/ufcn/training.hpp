#pragma once

#include <functional>
#include <optional>
#include <string>

#include "ufcn/data.hpp"
#include "ufcn/losses.hpp"
#include "ufcn/unet.hpp"

namespace ufcn {

enum class Variant { Ufcn, UfcnT, UfcnR, BaselineUnet };
enum class LrSchedule { Plateau, Step };

std::string to_string(Variant v);         // "ufcn", "ufcn-t", "ufcn-r", "unet"
Variant variant_from_string(const std::string& s);
std::string to_string(LrSchedule s);      // "PLATEAU", "STEP"
LrSchedule lr_schedule_from_string(const std::string& s);
ActivationKind variant_activation(Variant v);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  Variant variant = Variant::Ufcn;
  double initial_lr = 1e-4;
  double baseline_lr = 0;  // baseline U-Net starting LR; 0: initial_lr
  LrSchedule lr_schedule = LrSchedule::Plateau;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_min_lr = 1e-7;
  std::vector<int> step_epochs{};  // STEP: multiply by step_factor after these epochs
  double step_factor = 0.1;
  int epochs = 30;
  int batch_size = 4;
  LossWeights loss;
  SsimParams ssim;
  AdamParams adam;
  double dice_eps = 1.0;  // baseline dice loss smoothing
  bool augment = true;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no files written
  std::string log_path;        // JSONL; empty: not written

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  // UFCN: per-pair means of the composite terms. Baseline: total = recons =
  // mean batch dice loss; prob and l2 are zero.
  double total = 0, recons = 0, prob = 0, l2 = 0;
  std::vector<double> batch_losses;
  double val_total = 0;
  std::optional<double> val_ssim;  // mean SSIM of the reconstruction (UFCN)
  std::optional<double> val_dice;  // mean dice on val masks (baseline)
  double lr = 0;
  double wall_seconds = 0;
  bool best = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::string config_hash;
  std::string checkpoint_path;
  int best_epoch = -1;
};

class Adam {
 public:
  Adam() = default;
  Adam(const AdamParams& p, const std::vector<std::size_t>& sizes);
  // Updates params in place with gradient g; step count starts at 1.
  void step(ParamSet<float>& params, const Gradients<float>& g, double lr);
  long steps() const { return t_; }

 private:
  AdamParams p_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Reduce-on-plateau over a minimized metric. Never raises the LR.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr)
      : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}
  double step(double metric);
  double lr() const { return lr_; }

 private:
  double lr_, factor_;
  int patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

// lr(e) = initial * factor^(number of milestones <= e), epochs 1-based.
class StepScheduler {
 public:
  StepScheduler(double lr, std::vector<int> milestones, double factor)
      : lr_(lr), milestones_(std::move(milestones)), factor_(factor) {}
  double step(int completed_epoch);
  double lr() const { return lr_; }

 private:
  double lr_;
  std::vector<int> milestones_;
  double factor_;
};

struct UfcnTrainResult {
  UfcnModel<float> model;  // best-validation parameters
  TrainLog log;
};

struct UnetTrainResult {
  UnetModel<float> model;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Pairs must already be preprocessed to the model's input size. val may be
// empty, in which case selection uses the training total.
UfcnTrainResult train_ufcn(const TrainConfig& config, const ModelConfig& model_config,
                           const std::vector<TrainingPair>& train, const std::vector<TrainingPair>& val,
                           const EpochCallback& on_epoch = {});
UfcnTrainResult train_ufcn(const TrainConfig& config, const ModelConfig& model_config,
                           const DatasetManifest& manifest, const EpochCallback& on_epoch = {});

UnetTrainResult train_baseline_unet(const TrainConfig& config, const UnetConfig& unet_config,
                                    const std::vector<SupervisedPair>& train,
                                    const std::vector<SupervisedPair>& val,
                                    const EpochCallback& on_epoch = {});
UnetTrainResult train_baseline_unet(const TrainConfig& config, const UnetConfig& unet_config,
                                    const DatasetManifest& manifest, const EpochCallback& on_epoch = {});

// One JSON object per epoch, no trailing whitespace.
std::string epoch_record_json(const EpochRecord& r);
std::string train_summary(const TrainLog& log);

}  // namespace ufcn

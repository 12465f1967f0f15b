#pragma once

// JSON configuration. Every struct maps to an object whose keys are the
// field names; omitted keys keep their defaults and unknown keys are
// rejected with ConfigError. Layout of a full run file:
//
//   { "model": {...}, "unet": {...}, "train": {...}, "ssim": {...},
//     "loss": {...}, "phantom": {..., "lesion": {...}},
//     "dataset": "path/to/manifest.json", "out": "run_dir" }

#include <string>

#include "json.hpp"
#include "ufcn/phantom.hpp"
#include "ufcn/training.hpp"

namespace ufcn {

struct RunConfig {
  ModelConfig model;
  UnetConfig unet;
  TrainConfig train;  // train.ssim and train.loss mirror the top-level sections
  PhantomSpec phantom;
  std::string dataset;
  std::string out;

  // Cross-field checks: every section validates, and the U-Net input size
  // follows the UFCN input size.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const UnetConfig& c);
nlohmann::json to_json(const TrainConfig& c);  // without ssim/loss
nlohmann::json to_json(const SsimParams& c);
nlohmann::json to_json(const LossWeights& c);
nlohmann::json to_json(const LesionParams& c);
nlohmann::json to_json(const PhantomSpec& c);
nlohmann::json to_json(const RunConfig& c);

// Each overlays the keys present in j onto `into`.
void from_json_strict(const nlohmann::json& j, ModelConfig& into);
void from_json_strict(const nlohmann::json& j, UnetConfig& into);
void from_json_strict(const nlohmann::json& j, TrainConfig& into);
void from_json_strict(const nlohmann::json& j, SsimParams& into);
void from_json_strict(const nlohmann::json& j, LossWeights& into);
void from_json_strict(const nlohmann::json& j, LesionParams& into);
void from_json_strict(const nlohmann::json& j, PhantomSpec& into);
void from_json_strict(const nlohmann::json& j, RunConfig& into);

RunConfig load_run_config(const std::string& path);

// 16 hex digits of FNV-1a over the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace ufcn

#include "ufcn/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace ufcn {

using nlohmann::json;

namespace {

// Reads known keys out of an object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename V>
  Reader& get(const char* key, V& into) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      into = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  template <typename Fn>
  Reader& get_with(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        fn(j_.at(key));
      } catch (const json::exception& e) {
        throw ConfigError(where_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"channel_widths", c.channel_widths},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"activation", to_string(c.activation)},
          {"tilu_floor", c.tilu_floor},
          {"share_encoder_weights", c.share_encoder_weights},
          {"asg_threshold", c.asg_threshold},
          {"asg_floor", c.asg_floor},
          {"bam_threshold", c.bam_threshold},
          {"bam_pool_sharpness", c.bam_pool_sharpness},
          {"bam_input", to_string(c.bam_input)},
          {"bam_kernel", c.bam_kernel},
          {"init_seed", c.init_seed}};
}

void from_json_strict(const json& j, ModelConfig& c) {
  Reader(j, "model")
      .get("num_layers", c.num_layers)
      .get("channel_widths", c.channel_widths)
      .get("input_height", c.input_height)
      .get("input_width", c.input_width)
      .get_with("activation", [&](const json& v) { c.activation = activation_from_string(v.get<std::string>()); })
      .get("tilu_floor", c.tilu_floor)
      .get("share_encoder_weights", c.share_encoder_weights)
      .get("asg_threshold", c.asg_threshold)
      .get("asg_floor", c.asg_floor)
      .get("bam_threshold", c.bam_threshold)
      .get("bam_pool_sharpness", c.bam_pool_sharpness)
      .get_with("bam_input", [&](const json& v) { c.bam_input = bam_input_from_string(v.get<std::string>()); })
      .get("bam_kernel", c.bam_kernel)
      .get("init_seed", c.init_seed)
      .finish();
}

json to_json(const UnetConfig& c) {
  return {{"num_layers", c.num_layers},
          {"channel_widths", c.channel_widths},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"mask_threshold", c.mask_threshold},
          {"init_seed", c.init_seed}};
}

void from_json_strict(const json& j, UnetConfig& c) {
  Reader(j, "unet")
      .get("num_layers", c.num_layers)
      .get("channel_widths", c.channel_widths)
      .get("input_height", c.input_height)
      .get("input_width", c.input_width)
      .get("mask_threshold", c.mask_threshold)
      .get("init_seed", c.init_seed)
      .finish();
}

json to_json(const TrainConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"initial_lr", c.initial_lr},
          {"baseline_lr", c.baseline_lr},
          {"lr_schedule", to_string(c.lr_schedule)},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"plateau_min_lr", c.plateau_min_lr},
          {"step_epochs", c.step_epochs},
          {"step_factor", c.step_factor},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"dice_eps", c.dice_eps},
          {"augment", c.augment},
          {"seed", c.seed},
          {"checkpoint_dir", c.checkpoint_dir},
          {"log_path", c.log_path}};
}

void from_json_strict(const json& j, TrainConfig& c) {
  Reader(j, "train")
      .get_with("variant", [&](const json& v) { c.variant = variant_from_string(v.get<std::string>()); })
      .get("initial_lr", c.initial_lr)
      .get("baseline_lr", c.baseline_lr)
      .get_with("lr_schedule", [&](const json& v) { c.lr_schedule = lr_schedule_from_string(v.get<std::string>()); })
      .get("plateau_factor", c.plateau_factor)
      .get("plateau_patience", c.plateau_patience)
      .get("plateau_min_lr", c.plateau_min_lr)
      .get("step_epochs", c.step_epochs)
      .get("step_factor", c.step_factor)
      .get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("adam_beta1", c.adam.beta1)
      .get("adam_beta2", c.adam.beta2)
      .get("adam_eps", c.adam.eps)
      .get("dice_eps", c.dice_eps)
      .get("augment", c.augment)
      .get("seed", c.seed)
      .get("checkpoint_dir", c.checkpoint_dir)
      .get("log_path", c.log_path)
      .finish();
}

json to_json(const SsimParams& c) {
  return {{"window_size", c.window_size}, {"sigma", c.sigma}, {"k1", c.k1}, {"k2", c.k2},
          {"dynamic_range", c.dynamic_range}};
}

void from_json_strict(const json& j, SsimParams& c) {
  Reader(j, "ssim")
      .get("window_size", c.window_size)
      .get("sigma", c.sigma)
      .get("k1", c.k1)
      .get("k2", c.k2)
      .get("dynamic_range", c.dynamic_range)
      .finish();
}

json to_json(const LossWeights& c) { return {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}}; }

void from_json_strict(const json& j, LossWeights& c) {
  Reader(j, "loss").get("lambda1", c.lambda1).get("lambda2", c.lambda2).finish();
}

json to_json(const LesionParams& c) {
  return {{"mass_radius_min", c.mass_radius_min},     {"mass_radius_max", c.mass_radius_max},
          {"mass_sigma_fraction", c.mass_sigma_fraction}, {"mass_contrast", c.mass_contrast},
          {"calc_dots_min", c.calc_dots_min},         {"calc_dots_max", c.calc_dots_max},
          {"calc_dot_size_min", c.calc_dot_size_min}, {"calc_dot_size_max", c.calc_dot_size_max},
          {"calc_cluster_radius", c.calc_cluster_radius}, {"calc_contrast", c.calc_contrast},
          {"ad_spokes_min", c.ad_spokes_min},         {"ad_spokes_max", c.ad_spokes_max},
          {"ad_length_min", c.ad_length_min},         {"ad_length_max", c.ad_length_max},
          {"ad_contrast", c.ad_contrast}};
}

void from_json_strict(const json& j, LesionParams& c) {
  Reader(j, "phantom.lesion")
      .get("mass_radius_min", c.mass_radius_min)
      .get("mass_radius_max", c.mass_radius_max)
      .get("mass_sigma_fraction", c.mass_sigma_fraction)
      .get("mass_contrast", c.mass_contrast)
      .get("calc_dots_min", c.calc_dots_min)
      .get("calc_dots_max", c.calc_dots_max)
      .get("calc_dot_size_min", c.calc_dot_size_min)
      .get("calc_dot_size_max", c.calc_dot_size_max)
      .get("calc_cluster_radius", c.calc_cluster_radius)
      .get("calc_contrast", c.calc_contrast)
      .get("ad_spokes_min", c.ad_spokes_min)
      .get("ad_spokes_max", c.ad_spokes_max)
      .get("ad_length_min", c.ad_length_min)
      .get("ad_length_max", c.ad_length_max)
      .get("ad_contrast", c.ad_contrast)
      .finish();
}

json to_json(const PhantomSpec& c) {
  return {{"image_size", c.image_size},
          {"breast_extent_x", c.breast_extent_x},
          {"breast_extent_y", c.breast_extent_y},
          {"tissue_base", c.tissue_base},
          {"tissue_amplitude", c.tissue_amplitude},
          {"texture_scale", c.texture_scale},
          {"texture_octaves", c.texture_octaves},
          {"distractors_min", c.distractors_min},
          {"distractors_max", c.distractors_max},
          {"distractor_contrast", c.distractor_contrast},
          {"deformation_amplitude", c.deformation_amplitude},
          {"deformation_scale", c.deformation_scale},
          {"noise_sigma", c.noise_sigma},
          {"lesion", to_json(c.lesion)},
          {"cancer_fraction", c.cancer_fraction},
          {"train_pairs", c.train_pairs},
          {"val_pairs", c.val_pairs},
          {"test_pairs", c.test_pairs},
          {"seed", c.seed}};
}

void from_json_strict(const json& j, PhantomSpec& c) {
  Reader(j, "phantom")
      .get("image_size", c.image_size)
      .get("breast_extent_x", c.breast_extent_x)
      .get("breast_extent_y", c.breast_extent_y)
      .get("tissue_base", c.tissue_base)
      .get("tissue_amplitude", c.tissue_amplitude)
      .get("texture_scale", c.texture_scale)
      .get("texture_octaves", c.texture_octaves)
      .get("distractors_min", c.distractors_min)
      .get("distractors_max", c.distractors_max)
      .get("distractor_contrast", c.distractor_contrast)
      .get("deformation_amplitude", c.deformation_amplitude)
      .get("deformation_scale", c.deformation_scale)
      .get("noise_sigma", c.noise_sigma)
      .get_with("lesion", [&](const json& v) { from_json_strict(v, c.lesion); })
      .get("cancer_fraction", c.cancer_fraction)
      .get("train_pairs", c.train_pairs)
      .get("val_pairs", c.val_pairs)
      .get("test_pairs", c.test_pairs)
      .get("seed", c.seed)
      .finish();
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"unet", to_json(c.unet)},       {"train", to_json(c.train)},
          {"ssim", to_json(c.train.ssim)}, {"loss", to_json(c.train.loss)}, {"phantom", to_json(c.phantom)},
          {"dataset", c.dataset},          {"out", c.out}};
}

void from_json_strict(const json& j, RunConfig& c) {
  Reader(j, "config")
      .get_with("model", [&](const json& v) { from_json_strict(v, c.model); })
      .get_with("unet", [&](const json& v) { from_json_strict(v, c.unet); })
      .get_with("train", [&](const json& v) { from_json_strict(v, c.train); })
      .get_with("ssim", [&](const json& v) { from_json_strict(v, c.train.ssim); })
      .get_with("loss", [&](const json& v) { from_json_strict(v, c.train.loss); })
      .get_with("phantom", [&](const json& v) { from_json_strict(v, c.phantom); })
      .get("dataset", c.dataset)
      .get("out", c.out)
      .finish();
}

void RunConfig::validate() const {
  model.validate();
  unet.validate();
  train.validate();
  phantom.validate();
  if (unet.input_height != model.input_height || unet.input_width != model.input_width) {
    throw ConfigError("unet input size must equal the model input size");
  }
  if (train.ssim.window_size > std::min(model.input_height, model.input_width)) {
    throw ConfigError("ssim window exceeds the model input size");
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config '" + path + "': " + e.what());
  }
  RunConfig c;
  from_json_strict(j, c);
  return c;
}

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ufcn

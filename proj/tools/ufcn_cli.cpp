// ufcn: generate phantoms, train, evaluate, predict.
//
// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime or
// numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ufcn/checkpoint.hpp"
#include "ufcn/evaluation.hpp"
#include "ufcn/image_io.hpp"
#include "ufcn/phantom.hpp"
#include "ufcn/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ufcn;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<int> epochs;
  std::optional<int> pairs, train_pairs, val_pairs, test_pairs;
  std::optional<double> cancer_frac;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.model.init_seed = *o.seed;
    c.unet.init_seed = *o.seed;
    c.phantom.seed = *o.seed;
  }
  if (o.variant) c.train.variant = variant_from_string(*o.variant);
  c.model.activation = variant_activation(c.train.variant);
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.pairs) {
    // 70 / 10 / 20 split of the total
    if (*o.pairs <= 0) throw ConfigError("--pairs must be positive");
    c.phantom.val_pairs = *o.pairs / 10;
    c.phantom.test_pairs = *o.pairs / 5;
    c.phantom.train_pairs = *o.pairs - c.phantom.val_pairs - c.phantom.test_pairs;
  }
  if (o.train_pairs) c.phantom.train_pairs = *o.train_pairs;
  if (o.val_pairs) c.phantom.val_pairs = *o.val_pairs;
  if (o.test_pairs) c.phantom.test_pairs = *o.test_pairs;
  if (o.cancer_frac) c.phantom.cancer_fraction = *o.cancer_frac;
  if (o.out) c.out = *o.out;
  if (o.dataset) c.dataset = *o.dataset;
  c.validate();
  return c;
}

std::string require_out(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("no output directory (use --out or the config key \"out\")");
  return c.out;
}

std::string require_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("no dataset manifest (use --dataset or the config key \"dataset\")");
  if (!fs::exists(c.dataset)) throw LoadError("dataset manifest '" + c.dataset + "' does not exist");
  return c.dataset;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error("cannot create directory '" + dir + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_generate(const RunConfig& c) {
  const std::string out = require_out(c);
  const DatasetManifest m = write_dataset(c.phantom, out);
  int cancer = 0;
  std::map<std::string, int> kinds;
  for (const auto& r : m.records) {
    cancer += r.label;
    if (r.label) kinds[to_string(r.lesion_kind)]++;
  }
  std::printf("wrote %zu pairs to %s (train %d, val %d, test %d)\n", m.records.size(), out.c_str(),
              c.phantom.train_pairs, c.phantom.val_pairs, c.phantom.test_pairs);
  std::printf("cancer %d (MASS %d, CALC %d, AD %d), normal %zu\n", cancer, kinds["MASS"], kinds["CALC"], kinds["AD"],
              m.records.size() - cancer);
  return 0;
}

void print_epoch(const EpochRecord& r) {
  std::fprintf(stderr, "epoch %3d  train %.5f  val %.5f", r.epoch, r.total, r.val_total);
  if (r.val_ssim) std::fprintf(stderr, "  ssim %.4f", *r.val_ssim);
  if (r.val_dice) std::fprintf(stderr, "  dice %.4f", *r.val_dice);
  std::fprintf(stderr, "  lr %.2e  %.1fs%s\n", r.lr, r.wall_seconds, r.best ? "  *" : "");
}

int cmd_train(RunConfig c) {
  const std::string out = require_out(c);
  const DatasetManifest manifest = load_manifest(require_dataset(c));
  for (const auto& w : manifest.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  make_dir(out);
  c.train.checkpoint_dir = out;
  c.train.log_path = (fs::path(out) / "train_log.jsonl").string();
  write_text(fs::path(out) / "config.json", to_json(c).dump(2) + "\n");
  TrainLog log;
  if (c.train.variant == Variant::BaselineUnet) {
    log = train_baseline_unet(c.train, c.unet, manifest, print_epoch).log;
  } else {
    log = train_ufcn(c.train, c.model, manifest, print_epoch).log;
  }
  const std::string summary = train_summary(log);
  write_text(fs::path(out) / "summary.txt", summary);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& checkpoint, const std::string& split_name,
                 bool check_config) {
  const Split split = split_from_string(split_name);
  const std::string out = require_out(c);
  const DatasetManifest manifest = load_manifest(require_dataset(c));
  EvalReport rep;
  if (checkpoint_kind(checkpoint) == "unet") {
    const auto model = check_config ? load_unet_checkpoint(checkpoint, c.unet) : load_unet_checkpoint(checkpoint);
    const auto& mc = model.config();
    rep = evaluate_model(model, load_eval_split(manifest, split, mc.input_height, mc.input_width));
  } else {
    const auto model = check_config ? load_ufcn_checkpoint(checkpoint, c.model) : load_ufcn_checkpoint(checkpoint);
    const auto& mc = model.config();
    rep = evaluate_model(model, load_eval_split(manifest, split, mc.input_height, mc.input_width), &c.train.ssim);
  }
  make_dir(out);
  write_text(fs::path(out) / "report.json", report_to_json(rep).dump(2) + "\n");
  const std::string tables = render_tables(rep);
  write_text(fs::path(out) / "tables.txt", tables);
  std::fputs(tables.c_str(), stdout);
  return 0;
}

Tensor<std::uint8_t> overlay(const Tensor<float>& image, const Tensor<std::uint8_t>& mask) {
  Tensor<std::uint8_t> rgb(3, image.h, image.w);
  auto in_mask = [&](int i, int j) { return i >= 0 && j >= 0 && i < mask.h && j < mask.w && mask.at(0, i, j); };
  for (int i = 0; i < image.h; ++i)
    for (int j = 0; j < image.w; ++j) {
      const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(image.at(0, i, j), 0.0f, 1.0f) * 255));
      const bool edge = in_mask(i, j) && !(in_mask(i - 1, j) && in_mask(i + 1, j) && in_mask(i, j - 1) && in_mask(i, j + 1));
      rgb.at(0, i, j) = edge ? 255 : g;
      rgb.at(1, i, j) = edge ? 32 : g;
      rgb.at(2, i, j) = edge ? 32 : g;
    }
  return rgb;
}

int cmd_predict(const RunConfig& c, const std::string& checkpoint, const std::string& current_path,
                const std::string& prior_path) {
  const std::string out = require_out(c);
  MammogramPair raw;
  raw.id = fs::path(current_path).stem().string();
  raw.current = read_png_gray(current_path);
  raw.prior = read_png_gray(prior_path);
  Rng unused(0);
  json summary{{"id", raw.id}, {"checkpoint", checkpoint}};
  Tensor<float> current, prob;
  Tensor<std::uint8_t> mask;
  if (checkpoint_kind(checkpoint) == "unet") {
    const auto model = load_unet_checkpoint(checkpoint);
    const auto& mc = model.config();
    current = preprocess(raw, mc.input_height, mc.input_width, false, unused).pair.current;
    prob = model.forward(current);
    mask = model.predict_mask(current);
    summary["model"] = "unet";
  } else {
    const auto model = load_ufcn_checkpoint(checkpoint);
    const auto& mc = model.config();
    const auto pre = preprocess(raw, mc.input_height, mc.input_width, false, unused).pair;
    current = pre.current;
    const auto fwd = model.forward(pre.current, pre.prior);
    prob = fwd.avm_prob;
    mask = fwd.avm_mask;
    summary["model"] = "ufcn";
    summary["y_hat_per_layer"] = fwd.y_hat_per_layer;
    summary["y_hat_bam"] = fwd.y_hat_bam;
  }
  summary["activation_fraction"] = activation_fraction(mask);
  make_dir(out);
  write_png_mask((fs::path(out) / "avm_mask.png").string(), mask);
  write_png_gray((fs::path(out) / "avm_prob.png").string(), prob, 8);
  write_png_rgb((fs::path(out) / "overlay.png").string(), overlay(current, mask));
  write_text(fs::path(out) / "summary.json", summary.dump(2) + "\n");
  std::printf("activation fraction %.6f\n", summary["activation_fraction"].get<double>());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal change detection with a feature-correlation network"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "seed for data generation, initialization and training");
  app.add_option("--out", o.out, "output directory");

  auto* gen = app.add_subcommand("generate", "write a synthetic phantom dataset and manifest");
  gen->add_option("--pairs", o.pairs, "total pairs, split 70/10/20 into train/val/test");
  gen->add_option("--train-pairs", o.train_pairs);
  gen->add_option("--val-pairs", o.val_pairs);
  gen->add_option("--test-pairs", o.test_pairs);
  gen->add_option("--cancer-frac", o.cancer_frac, "fraction of cancer pairs per split");

  auto* train = app.add_subcommand("train", "train a model on a manifest's train split");
  train->add_option("--dataset", o.dataset, "manifest.json");
  train->add_option("--variant", o.variant, "ufcn | ufcn-t | ufcn-r | unet");
  train->add_option("--epochs", o.epochs);

  std::string checkpoint, split = "test", current, prior;
  bool check_config = false;
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on one split");
  eval->add_option("--dataset", o.dataset, "manifest.json");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train | val | test");
  eval->add_flag("--check-config", check_config, "reject a checkpoint that does not match --config");

  auto* pred = app.add_subcommand("predict", "write AVM artifacts for one image pair");
  pred->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  pred->add_option("--current", current)->required();
  pred->add_option("--prior", prior)->required();

  auto* defaults = app.add_subcommand("defaults", "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*defaults) {
      std::cout << to_json(RunConfig{}).dump(2) << '\n';
      return 0;
    }
    const RunConfig cfg = resolve(o);
    if (*gen) return cmd_generate(cfg);
    if (*train) return cmd_train(cfg);
    if (*eval) return cmd_evaluate(cfg, checkpoint, split, check_config);
    if (*pred) return cmd_predict(cfg, checkpoint, current, prior);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

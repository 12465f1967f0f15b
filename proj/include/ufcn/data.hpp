#pragma once

// Image pairs, preprocessing, and the on-disk dataset manifest.
//
// Trainers for the unsupervised model only ever receive TrainingPair, which
// has no mask field; masks live on MammogramPair and SupervisedPair.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ufcn/rng.hpp"
#include "ufcn/tensor.hpp"

namespace ufcn {

enum class LesionKind { None, Mass, Calc, Ad };

std::string to_string(LesionKind kind);  // "NONE", "MASS", "CALC", "AD"
LesionKind lesion_kind_from_string(const std::string& s);

enum class Split { Train, Val, Test };

std::string to_string(Split split);  // "train", "val", "test"
Split split_from_string(const std::string& s);

struct MammogramPair {
  std::string id;
  Tensor<float> current;
  Tensor<float> prior;
  int label = 0;
  std::optional<Tensor<std::uint8_t>> gt_mask;
  LesionKind lesion_kind = LesionKind::None;
};

struct TrainingPair {
  std::string id;
  Tensor<float> current;
  Tensor<float> prior;
  int label = 0;
};

TrainingPair training_view(const MammogramPair& pair);

// Current image and lesion mask, for the supervised baseline.
struct SupervisedPair {
  std::string id;
  Tensor<float> image;
  Tensor<std::uint8_t> mask;
};

// ---- preprocessing ---------------------------------------------------------

// Per-image min-max scaling to [0,1]. A constant image maps to zeros and
// sets *degenerate.
Tensor<float> normalize_minmax(const Tensor<float>& image, bool* degenerate = nullptr);

// Bilinear (half-pixel centers) and nearest-neighbour resampling.
Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width);
Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& mask, int height, int width);

// Horizontal flip followed by a rotation about the image center. Pixels
// mapped from outside the frame are 0.
struct Augmentation {
  bool flip = false;
  double angle_deg = 0.0;
};

Augmentation sample_augmentation(Rng& rng, double max_angle_deg = 10.0);
Tensor<float> augment_image(const Tensor<float>& image, const Augmentation& aug);
Tensor<std::uint8_t> augment_mask(const Tensor<std::uint8_t>& mask, const Augmentation& aug);

struct PreprocessResult {
  MammogramPair pair;
  bool current_degenerate = false;
  bool prior_degenerate = false;
};

// Normalize, rescale, and (optionally) apply one shared augmentation to
// current, prior and mask. No registration between visits is attempted.
PreprocessResult preprocess(const MammogramPair& pair, int height, int width, bool augment, Rng& rng);

// ---- manifest --------------------------------------------------------------

struct ManifestRecord {
  std::string id;
  Split split = Split::Train;
  std::string current_path;  // relative to the manifest directory
  std::string prior_path;
  int label = 0;
  std::optional<std::string> mask_path;
  LesionKind lesion_kind = LesionKind::None;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.json
  std::vector<ManifestRecord> records;
  std::vector<std::string> warnings;

  std::vector<const ManifestRecord*> split(Split s) const;
};

// Parses and validates manifest.json (unique ids, files present, labels in
// {0,1}). Soft problems, such as a cancer record in val/test without a mask,
// are appended to warnings.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

MammogramPair load_pair(const DatasetManifest& manifest, const ManifestRecord& record);

// Preprocessed (no augmentation) splits at the given size.
std::vector<TrainingPair> load_training_split(const DatasetManifest& manifest, Split split,
                                              int height, int width);
std::vector<MammogramPair> load_eval_split(const DatasetManifest& manifest, Split split, int height,
                                           int width);
// label = 1 records only; each must carry a mask.
std::vector<SupervisedPair> load_supervised_split(const DatasetManifest& manifest, Split split,
                                                  int height, int width);

}  // namespace ufcn

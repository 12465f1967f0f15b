#pragma once

// Procedural longitudinal phantoms: a half-ellipse breast with multi-octave
// value-noise texture and a few benign bright blobs that persist across
// visits. The current visit is the prior under a smooth displacement field
// plus independent noise; cancer pairs additionally carry one new lesion in
// the current visit. A small saturated marker pins every image's intensity
// range to [0,1]. Lengths are in pixels; the defaults suit 128 x 128.

#include <cstdint>
#include <string>

#include "ufcn/data.hpp"

namespace ufcn {

struct LesionParams {
  double mass_radius_min = 7.0;
  double mass_radius_max = 11.0;
  double mass_sigma_fraction = 0.6;  // Gaussian sigma = fraction * radius
  double mass_contrast = 0.35;

  int calc_dots_min = 5;
  int calc_dots_max = 20;
  int calc_dot_size_min = 1;
  int calc_dot_size_max = 3;
  double calc_cluster_radius = 8.0;
  double calc_contrast = 0.5;

  int ad_spokes_min = 5;
  int ad_spokes_max = 9;
  double ad_length_min = 10.0;
  double ad_length_max = 18.0;
  double ad_contrast = 0.3;

  void validate() const;
};

struct PhantomSpec {
  int image_size = 128;
  double breast_extent_x = 0.78;  // semi-axis along x, fraction of width
  double breast_extent_y = 0.46;  // semi-axis along y, fraction of height
  double tissue_base = 0.15;
  double tissue_amplitude = 0.4;
  double texture_scale = 32.0;  // lattice spacing of the coarsest octave
  int texture_octaves = 4;
  int distractors_min = 1;
  int distractors_max = 2;
  double distractor_contrast = 0.35;
  double deformation_amplitude = 2.0;
  double deformation_scale = 48.0;
  double noise_sigma = 0.01;
  LesionParams lesion;

  double cancer_fraction = 0.4;
  int train_pairs = 200;
  int val_pairs = 40;
  int test_pairs = 60;
  std::uint64_t seed = 0;

  void validate() const;
  int total_pairs() const { return train_pairs + val_pairs + test_pairs; }
};

// Which split a global pair index falls in, and its label and lesion kind.
// Within each split, exactly round(cancer_fraction * n) pairs are cancer,
// chosen by a seeded permutation; lesion kinds cycle MASS, CALC, AD.
struct PhantomAssignment {
  Split split = Split::Train;
  int index_in_split = 0;
  int label = 0;
  LesionKind kind = LesionKind::None;
};

PhantomAssignment assign_phantom(const PhantomSpec& spec, int index);

// Deterministic in (spec, index). The mask is present (possibly empty).
MammogramPair generate_phantom_pair(const PhantomSpec& spec, int index);

struct LesionResult {
  Tensor<float> image;
  Tensor<std::uint8_t> mask;
};

// Places one lesion with its support inside `allowed`: the centre is drawn
// from positions whose extent fits, then up to 100 draws are tried until the
// mask lies inside the region. Pixels are clipped to [0,1].
LesionResult inject_lesion(const Tensor<float>& image, LesionKind kind, const LesionParams& params,
                           Rng& rng, const Tensor<std::uint8_t>& allowed);

// Primitive painters. Each adds intensity to `image` (unclipped) and ORs
// its support into `mask`.
void draw_mass(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy, double cx,
               double radius, double sigma, double contrast);
void draw_calc_cluster(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy, double cx,
                       int dots, const LesionParams& params, Rng& rng);
void draw_architectural_distortion(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy,
                                   double cx, int spokes, const LesionParams& params, Rng& rng);

// Writes images/, masks/ and manifest.json under out_dir.
DatasetManifest write_dataset(const PhantomSpec& spec, const std::string& out_dir);

}  // namespace ufcn

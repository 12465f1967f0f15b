#include "ufcn/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "ufcn/image_io.hpp"

namespace ufcn {

void LesionParams::validate() const {
  if (!(mass_radius_min > 0 && mass_radius_max >= mass_radius_min)) throw ConfigError("mass radius range invalid");
  if (!(mass_sigma_fraction > 0)) throw ConfigError("mass_sigma_fraction must be > 0");
  if (!(calc_dots_min >= 1 && calc_dots_max >= calc_dots_min)) throw ConfigError("calc dot count range invalid");
  if (!(calc_dot_size_min >= 1 && calc_dot_size_max >= calc_dot_size_min)) throw ConfigError("calc dot size range invalid");
  if (!(calc_cluster_radius > 0)) throw ConfigError("calc_cluster_radius must be > 0");
  if (!(ad_spokes_min >= 1 && ad_spokes_max >= ad_spokes_min)) throw ConfigError("AD spoke count range invalid");
  if (!(ad_length_min > 0 && ad_length_max >= ad_length_min)) throw ConfigError("AD length range invalid");
  if (!(mass_contrast > 0 && calc_contrast > 0 && ad_contrast > 0)) throw ConfigError("lesion contrasts must be positive");
}

namespace {

double lesion_extent(LesionKind kind, const LesionParams& p) {
  switch (kind) {
    case LesionKind::Mass: return p.mass_radius_max;
    case LesionKind::Calc: return p.calc_cluster_radius + p.calc_dot_size_max + 1;
    case LesionKind::Ad: return p.ad_length_max + 1;
    case LesionKind::None: break;
  }
  return 0;
}

// Radius of the disc kept free for the lesion.
double lesion_reserve(const LesionParams& p) {
  return std::max({lesion_extent(LesionKind::Mass, p), lesion_extent(LesionKind::Calc, p),
                   lesion_extent(LesionKind::Ad, p)}) + 1;
}

}  // namespace

void PhantomSpec::validate() const {
  if (image_size < 16) throw ConfigError("phantom image_size must be >= 16");
  if (!(breast_extent_x > 0.2 && breast_extent_x <= 1.0 && breast_extent_y > 0.2 && breast_extent_y <= 0.5)) {
    throw ConfigError("breast extents out of range");
  }
  if (texture_octaves < 1 || !(texture_scale >= 2)) throw ConfigError("texture parameters invalid");
  if (distractors_min < 0 || distractors_max < distractors_min) throw ConfigError("distractor count range invalid");
  if (!(distractor_contrast >= 0)) throw ConfigError("distractor_contrast must be >= 0");
  if (!(deformation_amplitude >= 0 && deformation_amplitude < 0.05 * image_size)) {
    throw ConfigError("deformation amplitude must be below 5% of the image width");
  }
  if (!(deformation_scale > 0)) throw ConfigError("deformation_scale must be > 0");
  if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(cancer_fraction >= 0 && cancer_fraction <= 1)) throw ConfigError("cancer fraction must lie in [0,1]");
  if (train_pairs < 0 || val_pairs < 0 || test_pairs < 0 || total_pairs() == 0) {
    throw ConfigError("pair counts must be non-negative and not all zero");
  }
  lesion.validate();
  const double reserve = lesion_reserve(lesion);
  if (reserve + 3 >= 0.4 * breast_extent_x * image_size) {
    throw ConfigError("phantom image_size " + std::to_string(image_size) + " leaves no room for lesions up to " +
                      std::to_string(static_cast<int>(reserve)) + " px across; enlarge the image or shrink the lesions");
  }
}

namespace {

// Smoothly interpolated lattice of uniform values in [lo, hi].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, double spacing, int h, int w, double lo, double hi) : spacing_(spacing) {
    gh_ = static_cast<int>(std::ceil(h / spacing)) + 3;
    gw_ = static_cast<int>(std::ceil(w / spacing)) + 3;
    lattice_.resize(static_cast<std::size_t>(gh_) * gw_);
    for (auto& v : lattice_) v = rng.uniform(lo, hi);
  }

  double at(double y, double x) const {
    const double gy = y / spacing_ + 1.0, gx = x / spacing_ + 1.0;  // lattice starts one cell early
    const int i = std::clamp(static_cast<int>(std::floor(gy)), 0, gh_ - 2);
    const int j = std::clamp(static_cast<int>(std::floor(gx)), 0, gw_ - 2);
    const double fy = smooth(std::clamp(gy - i, 0.0, 1.0)), fx = smooth(std::clamp(gx - j, 0.0, 1.0));
    const double a = lattice_[i * gw_ + j], b = lattice_[i * gw_ + j + 1];
    const double c = lattice_[(i + 1) * gw_ + j], d = lattice_[(i + 1) * gw_ + j + 1];
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double spacing_;
  int gh_ = 0, gw_ = 0;
  std::vector<double> lattice_;
};

struct Blob {
  double cy, cx, sigma, contrast;
};

// The prior-visit tissue as a continuous function of position.
class Scene {
 public:
  Scene(const PhantomSpec& spec, Rng& rng) : spec_(spec) {
    const int n = spec.image_size;
    cy_ = (n - 1) / 2.0;
    rx_ = spec.breast_extent_x * n;
    ry_ = spec.breast_extent_y * n;
    double spacing = spec.texture_scale, amp = 1.0;
    for (int o = 0; o < spec.texture_octaves; ++o) {
      octaves_.emplace_back(rng, std::max(2.0, spacing), n, n, 0.0, 1.0);
      amps_.push_back(amp);
      amp_sum_ += amp;
      spacing /= 2;
      amp /= 2;
    }
    const auto& lp = spec.lesion;
    // A disc deep in the breast that distractors avoid, so a lesion always fits.
    const double reserve = lesion_reserve(lp);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw GenerationError("no room to reserve a lesion site");
      ry0_ = rng.uniform(0, n - 1);
      rx0_ = rng.uniform(0, n - 1);
      if (rho(ry0_, rx0_) <= 0.4 && rx0_ >= reserve + 3) break;
    }
    const int count = rng.uniform_int(spec.distractors_min, spec.distractors_max);
    for (int k = 0; k < count; ++k) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double r = rng.uniform(lp.mass_radius_min, lp.mass_radius_max);
        const double y = rng.uniform(0, n - 1), x = rng.uniform(0, n - 1);
        if (rho(y, x) > 0.7 || x < r + 2) continue;
        bool clear = true;
        for (const auto& b : blobs_) clear = clear && std::hypot(b.cy - y, b.cx - x) > 2.5 * (r + b.sigma);
        clear = clear && std::hypot(ry0_ - y, rx0_ - x) > reserve + r + 3;
        if (!clear) continue;
        blobs_.push_back({y, x, lp.mass_sigma_fraction * r, spec.distractor_contrast});
        radii_.push_back(r);
        break;
      }
    }
  }

  double rho(double y, double x) const {
    const double dy = (y - cy_) / ry_, dx = x / rx_;
    return std::sqrt(dy * dy + dx * dx);
  }

  double operator()(double y, double x) const {
    const double r = rho(y, x);
    if (r >= 1.0 || x < 0) return 0.0;
    const double edge = std::clamp((1.0 - r) / 0.06, 0.0, 1.0);
    double tex = 0;
    for (std::size_t o = 0; o < octaves_.size(); ++o) tex += amps_[o] * octaves_[o].at(y, x);
    double v = spec_.tissue_base + spec_.tissue_amplitude * tex / amp_sum_;
    for (const auto& b : blobs_) {
      const double d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
      v += b.contrast * std::exp(-d2 / (2 * b.sigma * b.sigma));
    }
    return edge * v;
  }

  // Pixels where a new lesion may be centred and extend: deep inside the
  // breast, clear of the chest-wall edge and of every distractor.
  Tensor<std::uint8_t> lesion_region() const {
    const int n = spec_.image_size;
    Tensor<std::uint8_t> m(1, n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        bool ok = rho(i, j) <= 0.75 && j >= 3 && i >= 3 && i < n - 3 && j < n - 3;
        for (std::size_t k = 0; ok && k < blobs_.size(); ++k) {
          ok = std::hypot(i - blobs_[k].cy, j - blobs_[k].cx) > radii_[k] + 3;
        }
        m.at(0, i, j) = ok;
      }
    return m;
  }

 private:
  const PhantomSpec& spec_;
  double cy_ = 0, rx_ = 1, ry_ = 1;
  double ry0_ = 0, rx0_ = 0;
  std::vector<ValueNoise> octaves_;
  std::vector<double> amps_;
  double amp_sum_ = 0;
  std::vector<Blob> blobs_;
  std::vector<double> radii_;
};

void clip01(Tensor<float>& t) {
  for (auto& v : t.data) v = std::clamp(v, 0.0f, 1.0f);
}

void paint_marker(Tensor<float>& img) {
  for (int i = 2; i < 6; ++i)
    for (int j = img.w - 6; j < img.w - 2; ++j) img.at(0, i, j) = 1.0f;
}

}  // namespace

PhantomAssignment assign_phantom(const PhantomSpec& spec, int index) {
  if (index < 0 || index >= spec.total_pairs()) {
    throw ConfigError("phantom index " + std::to_string(index) + " out of range");
  }
  PhantomAssignment a;
  int n = spec.train_pairs, base = 0, stream = 0;
  if (index >= spec.train_pairs + spec.val_pairs) {
    a.split = Split::Test;
    base = spec.train_pairs + spec.val_pairs;
    n = spec.test_pairs;
    stream = 2;
  } else if (index >= spec.train_pairs) {
    a.split = Split::Val;
    base = spec.train_pairs;
    n = spec.val_pairs;
    stream = 1;
  }
  a.index_in_split = index - base;
  // Seeded Fisher-Yates; the first round(frac * n) slots are cancer.
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(spec.seed, 0xC0FFEE00ULL + stream));
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  const int n_cancer = static_cast<int>(std::lround(spec.cancer_fraction * n));
  const int slot = static_cast<int>(std::find(perm.begin(), perm.end(), a.index_in_split) - perm.begin());
  if (slot < n_cancer) {
    a.label = 1;
    static constexpr LesionKind kCycle[] = {LesionKind::Mass, LesionKind::Calc, LesionKind::Ad};
    a.kind = kCycle[slot % 3];
  }
  return a;
}

void draw_mass(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy, double cx,
               double radius, double sigma, double contrast) {
  const double reach = std::max(radius, 3 * sigma);
  const int i0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int i1 = std::min(image.h - 1, static_cast<int>(std::ceil(cy + reach)));
  const int j0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int j1 = std::min(image.w - 1, static_cast<int>(std::ceil(cx + reach)));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
      image.at(0, i, j) += static_cast<float>(contrast * std::exp(-d2 / (2 * sigma * sigma)));
      if (d2 <= radius * radius) mask.at(0, i, j) = 1;
    }
}

void draw_calc_cluster(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy, double cx,
                       int dots, const LesionParams& p, Rng& rng) {
  Tensor<std::uint8_t> support(1, image.h, image.w);
  for (int d = 0; d < dots; ++d) {
    const double r = p.calc_cluster_radius * std::sqrt(rng.uniform());
    const double t = rng.uniform(0, 2 * std::numbers::pi);
    const int size = rng.uniform_int(p.calc_dot_size_min, p.calc_dot_size_max);
    const double c = p.calc_contrast * rng.uniform(0.75, 1.0);
    const int y0 = static_cast<int>(std::lround(cy + r * std::sin(t))) - size / 2;
    const int x0 = static_cast<int>(std::lround(cx + r * std::cos(t))) - size / 2;
    for (int i = y0; i < y0 + size; ++i)
      for (int j = x0; j < x0 + size; ++j) {
        if (i < 0 || j < 0 || i >= image.h || j >= image.w || support.at(0, i, j)) continue;
        support.at(0, i, j) = 1;
        image.at(0, i, j) += static_cast<float>(c);
      }
  }
  for (int i = 0; i < image.h; ++i)
    for (int j = 0; j < image.w; ++j) {
      if (!support.at(0, i, j)) continue;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int y = i + di, x = j + dj;
          if (y >= 0 && x >= 0 && y < image.h && x < image.w) mask.at(0, y, x) = 1;
        }
    }
}

void draw_architectural_distortion(Tensor<float>& image, Tensor<std::uint8_t>& mask, double cy,
                                   double cx, int spokes, const LesionParams& p, Rng& rng) {
  Tensor<float> added(1, image.h, image.w);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  for (int s = 0; s < spokes; ++s) {
    const double angle = phase + 2 * std::numbers::pi * s / spokes + rng.uniform(-0.2, 0.2);
    const double len = rng.uniform(p.ad_length_min, p.ad_length_max);
    for (double t = 0; t <= len; t += 0.5) {
      const int i = static_cast<int>(std::lround(cy + t * std::sin(angle)));
      const int j = static_cast<int>(std::lround(cx + t * std::cos(angle)));
      if (i < 0 || j < 0 || i >= image.h || j >= image.w) continue;
      const float v = static_cast<float>(p.ad_contrast * (1.0 - 0.6 * t / len));
      added.at(0, i, j) = std::max(added.at(0, i, j), v);
      mask.at(0, i, j) = 1;
    }
  }
  add_inplace(image, added);
}

LesionResult inject_lesion(const Tensor<float>& image, LesionKind kind, const LesionParams& p,
                           Rng& rng, const Tensor<std::uint8_t>& allowed) {
  if (kind == LesionKind::None) throw GenerationError("inject_lesion needs a lesion kind");
  if (image.c != 1 || !(allowed.h == image.h && allowed.w == image.w)) {
    throw ShapeError("inject_lesion: image/region shape mismatch");
  }
  const double extent = lesion_extent(kind, p);
  // Centres whose whole extent ring lies in the allowed region.
  std::vector<int> centres;
  for (int i = 0; i < image.h; ++i)
    for (int j = 0; j < image.w; ++j) {
      bool fits = allowed.at(0, i, j) != 0;
      for (int k = 0; k < 16 && fits; ++k) {
        const double t = 2 * std::numbers::pi * k / 16;
        const int y = static_cast<int>(std::lround(i + extent * std::sin(t)));
        const int x = static_cast<int>(std::lround(j + extent * std::cos(t)));
        fits = y >= 0 && x >= 0 && y < image.h && x < image.w && allowed.at(0, y, x);
      }
      if (fits) centres.push_back(i * image.w + j);
    }
  if (centres.empty()) throw GenerationError("no room for a " + to_string(kind) + " lesion");
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int c = centres[rng.uniform_int(0, static_cast<int>(centres.size()) - 1)];
    const double cy = c / image.w + rng.uniform(-0.5, 0.5), cx = c % image.w + rng.uniform(-0.5, 0.5);

    LesionResult res{image, Tensor<std::uint8_t>(1, image.h, image.w)};
    switch (kind) {
      case LesionKind::Mass: {
        const double r = rng.uniform(p.mass_radius_min, p.mass_radius_max);
        draw_mass(res.image, res.mask, cy, cx, r, p.mass_sigma_fraction * r, p.mass_contrast);
        break;
      }
      case LesionKind::Calc:
        draw_calc_cluster(res.image, res.mask, cy, cx, rng.uniform_int(p.calc_dots_min, p.calc_dots_max), p, rng);
        break;
      case LesionKind::Ad:
        draw_architectural_distortion(res.image, res.mask, cy, cx,
                                      rng.uniform_int(p.ad_spokes_min, p.ad_spokes_max), p, rng);
        break;
      case LesionKind::None: break;
    }
    bool inside = true;
    for (std::size_t i = 0; i < res.mask.size() && inside; ++i) inside = !res.mask.data[i] || allowed.data[i];
    if (!inside) continue;
    clip01(res.image);
    return res;
  }
  throw GenerationError("could not place " + to_string(kind) + " lesion after 100 attempts");
}

MammogramPair generate_phantom_pair(const PhantomSpec& spec, int index) {
  spec.validate();
  const PhantomAssignment a = assign_phantom(spec, index);
  const int n = spec.image_size;
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const Scene scene(spec, rng);
  const ValueNoise disp_y(rng, spec.deformation_scale, n, n, -1.0, 1.0);
  const ValueNoise disp_x(rng, spec.deformation_scale, n, n, -1.0, 1.0);

  MammogramPair pair;
  char id[32];
  std::snprintf(id, sizeof id, "%s_%04d", to_string(a.split).c_str(), a.index_in_split);
  pair.id = id;
  pair.label = a.label;
  pair.lesion_kind = a.kind;
  pair.prior = Tensor<float>(1, n, n);
  pair.current = Tensor<float>(1, n, n);
  Tensor<std::uint8_t> tissue(1, n, n);
  const double amp = spec.deformation_amplitude;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      pair.prior.at(0, i, j) = static_cast<float>(scene(i, j));
      const double y = i + amp * disp_y.at(i, j), x = j + amp * disp_x.at(i, j);
      pair.current.at(0, i, j) = static_cast<float>(scene(y, x));
      tissue.at(0, i, j) = pair.prior.at(0, i, j) > 0 || pair.current.at(0, i, j) > 0;
    }

  Tensor<std::uint8_t> mask(1, n, n);
  if (a.label == 1) {
    auto res = inject_lesion(pair.current, a.kind, spec.lesion, rng, scene.lesion_region());
    pair.current = std::move(res.image);
    mask = std::move(res.mask);
  }
  for (auto* img : {&pair.prior, &pair.current}) {
    for (std::size_t i = 0; i < img->size(); ++i) {
      if (tissue.data[i]) img->data[i] += static_cast<float>(spec.noise_sigma * rng.normal());
    }
    clip01(*img);
    paint_marker(*img);
  }
  pair.gt_mask = std::move(mask);
  return pair;
}

DatasetManifest write_dataset(const PhantomSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec || !fs::is_directory(root / "images")) throw Error("cannot create dataset directory '" + out_dir + "'");

  const int total = spec.total_pairs();
  DatasetManifest manifest;
  manifest.root = root;
  manifest.records.resize(total);
  std::vector<std::string> errors(total);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    try {
      const auto pair = generate_phantom_pair(spec, i);
      ManifestRecord r;
      r.id = pair.id;
      r.split = assign_phantom(spec, i).split;
      r.current_path = "images/" + pair.id + "_current.png";
      r.prior_path = "images/" + pair.id + "_prior.png";
      r.mask_path = "masks/" + pair.id + ".png";
      r.label = pair.label;
      r.lesion_kind = pair.lesion_kind;
      write_png_gray((root / r.current_path).string(), pair.current);
      write_png_gray((root / r.prior_path).string(), pair.prior);
      write_png_mask((root / *r.mask_path).string(), *pair.gt_mask);
      manifest.records[i] = std::move(r);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (int i = 0; i < total; ++i) {
    if (!errors[i].empty()) throw GenerationError("pair " + std::to_string(i) + ": " + errors[i]);
  }
  save_manifest(manifest, (root / "manifest.json").string());
  return manifest;
}

}  // namespace ufcn

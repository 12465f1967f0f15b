#include "ufcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ufcn/image_io.hpp"

namespace ufcn {

std::string to_string(LesionKind kind) {
  switch (kind) {
    case LesionKind::None: return "NONE";
    case LesionKind::Mass: return "MASS";
    case LesionKind::Calc: return "CALC";
    case LesionKind::Ad: return "AD";
  }
  return "NONE";
}

LesionKind lesion_kind_from_string(const std::string& s) {
  if (s == "NONE") return LesionKind::None;
  if (s == "MASS") return LesionKind::Mass;
  if (s == "CALC") return LesionKind::Calc;
  if (s == "AD") return LesionKind::Ad;
  throw ConfigError("unknown lesion kind '" + s + "' (expected NONE, MASS, CALC or AD)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

TrainingPair training_view(const MammogramPair& pair) {
  return {pair.id, pair.current, pair.prior, pair.label};
}

Tensor<float> normalize_minmax(const Tensor<float>& image, bool* degenerate) {
  if (image.empty()) throw ShapeError("normalize_minmax: empty image");
  const auto [lo_it, hi_it] = std::minmax_element(image.data.begin(), image.data.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw NumericalError("image contains non-finite values");
  Tensor<float> out(image.c, image.h, image.w);
  if (degenerate) *degenerate = !(hi > lo);
  if (!(hi > lo)) return out;
  const float scale = 1.0f / (hi - lo);
  for (std::size_t i = 0; i < image.size(); ++i) out.data[i] = (image.data[i] - lo) * scale;
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resize: target size must be positive");
  if (image.h == height && image.w == width) return image;
  Tensor<float> out(image.c, height, width);
  const double sy = static_cast<double>(image.h) / height, sx = static_cast<double>(image.w) / width;
  for (int c = 0; c < image.c; ++c)
    for (int i = 0; i < height; ++i) {
      const double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, image.h - 1.0);
      const int y0 = static_cast<int>(y), y1 = std::min(y0 + 1, image.h - 1);
      const double fy = y - y0;
      for (int j = 0; j < width; ++j) {
        const double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, image.w - 1.0);
        const int x0 = static_cast<int>(x), x1 = std::min(x0 + 1, image.w - 1);
        const double fx = x - x0;
        const double v = (image.at(c, y0, x0) * (1 - fx) + image.at(c, y0, x1) * fx) * (1 - fy) +
                         (image.at(c, y1, x0) * (1 - fx) + image.at(c, y1, x1) * fx) * fy;
        out.at(c, i, j) = static_cast<float>(v);
      }
    }
  return out;
}

Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& mask, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resize: target size must be positive");
  if (mask.h == height && mask.w == width) return mask;
  Tensor<std::uint8_t> out(mask.c, height, width);
  for (int c = 0; c < mask.c; ++c)
    for (int i = 0; i < height; ++i) {
      const int y = std::min(mask.h - 1, static_cast<int>((i + 0.5) * mask.h / height));
      for (int j = 0; j < width; ++j) {
        const int x = std::min(mask.w - 1, static_cast<int>((j + 0.5) * mask.w / width));
        out.at(c, i, j) = mask.at(c, y, x);
      }
    }
  return out;
}

Augmentation sample_augmentation(Rng& rng, double max_angle_deg) {
  Augmentation a;
  a.flip = rng.bernoulli(0.5);
  a.angle_deg = rng.uniform(-max_angle_deg, max_angle_deg);
  return a;
}

namespace {

// For each output pixel, the source coordinate under flip-then-rotate.
template <typename Fn>
void for_each_source(int h, int w, const Augmentation& aug, Fn&& fn) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double t = aug.angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      // inverse rotation, then inverse flip
      const double dy = i - cy, dx = j - cx;
      const double y = cy + ct * dy - st * dx;
      double x = cx + st * dy + ct * dx;
      if (aug.flip) x = (w - 1) - x;
      fn(i, j, y, x);
    }
}

}  // namespace

Tensor<float> augment_image(const Tensor<float>& image, const Augmentation& aug) {
  if (!aug.flip && aug.angle_deg == 0.0) return image;
  Tensor<float> out(image.c, image.h, image.w);
  for_each_source(image.h, image.w, aug, [&](int i, int j, double y, double x) {
    if (y < -0.5 || x < -0.5 || y > image.h - 0.5 || x > image.w - 0.5) return;
    const double yc = std::clamp(y, 0.0, image.h - 1.0), xc = std::clamp(x, 0.0, image.w - 1.0);
    const int y0 = static_cast<int>(yc), x0 = static_cast<int>(xc);
    const int y1 = std::min(y0 + 1, image.h - 1), x1 = std::min(x0 + 1, image.w - 1);
    const double fy = yc - y0, fx = xc - x0;
    for (int c = 0; c < image.c; ++c) {
      out.at(c, i, j) = static_cast<float>((image.at(c, y0, x0) * (1 - fx) + image.at(c, y0, x1) * fx) * (1 - fy) +
                                           (image.at(c, y1, x0) * (1 - fx) + image.at(c, y1, x1) * fx) * fy);
    }
  });
  return out;
}

Tensor<std::uint8_t> augment_mask(const Tensor<std::uint8_t>& mask, const Augmentation& aug) {
  if (!aug.flip && aug.angle_deg == 0.0) return mask;
  Tensor<std::uint8_t> out(mask.c, mask.h, mask.w);
  for_each_source(mask.h, mask.w, aug, [&](int i, int j, double y, double x) {
    const int yi = static_cast<int>(std::lround(y)), xi = static_cast<int>(std::lround(x));
    if (yi < 0 || xi < 0 || yi >= mask.h || xi >= mask.w) return;
    for (int c = 0; c < mask.c; ++c) out.at(c, i, j) = mask.at(c, yi, xi);
  });
  return out;
}

PreprocessResult preprocess(const MammogramPair& pair, int height, int width, bool augment, Rng& rng) {
  if (pair.current.c != 1 || pair.prior.c != 1) throw ShapeError("pair '" + pair.id + "' must be grayscale");
  if (!pair.current.same_shape(pair.prior)) {
    throw ShapeError("pair '" + pair.id + "': current " + shape_string(pair.current) + " vs prior " +
                     shape_string(pair.prior));
  }
  if (pair.gt_mask && (pair.gt_mask->h != pair.current.h || pair.gt_mask->w != pair.current.w)) {
    throw ShapeError("pair '" + pair.id + "': mask size differs from image size");
  }
  PreprocessResult res;
  res.pair.id = pair.id;
  res.pair.label = pair.label;
  res.pair.lesion_kind = pair.lesion_kind;
  res.pair.current = resize_bilinear(normalize_minmax(pair.current, &res.current_degenerate), height, width);
  res.pair.prior = resize_bilinear(normalize_minmax(pair.prior, &res.prior_degenerate), height, width);
  if (pair.gt_mask) res.pair.gt_mask = resize_nearest(*pair.gt_mask, height, width);
  if (augment) {
    const Augmentation aug = sample_augmentation(rng);
    res.pair.current = augment_image(res.pair.current, aug);
    res.pair.prior = augment_image(res.pair.prior, aug);
    if (res.pair.gt_mask) res.pair.gt_mask = augment_mask(*res.pair.gt_mask, aug);
  }
  return res;
}

std::vector<const ManifestRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

MammogramPair load_pair(const DatasetManifest& manifest, const ManifestRecord& r) {
  MammogramPair p;
  p.id = r.id;
  p.label = r.label;
  p.lesion_kind = r.lesion_kind;
  p.current = read_png_gray((manifest.root / r.current_path).string());
  p.prior = read_png_gray((manifest.root / r.prior_path).string());
  if (r.mask_path) p.gt_mask = read_png_mask((manifest.root / *r.mask_path).string());
  return p;
}

namespace {

MammogramPair load_preprocessed(const DatasetManifest& m, const ManifestRecord& r, int h, int w) {
  Rng unused(0);
  return preprocess(load_pair(m, r), h, w, false, unused).pair;
}

}  // namespace

std::vector<TrainingPair> load_training_split(const DatasetManifest& manifest, Split split,
                                              int height, int width) {
  std::vector<TrainingPair> out;
  for (const auto* r : manifest.split(split)) {
    out.push_back(training_view(load_preprocessed(manifest, *r, height, width)));
  }
  return out;
}

std::vector<MammogramPair> load_eval_split(const DatasetManifest& manifest, Split split, int height,
                                           int width) {
  std::vector<MammogramPair> out;
  for (const auto* r : manifest.split(split)) out.push_back(load_preprocessed(manifest, *r, height, width));
  return out;
}

std::vector<SupervisedPair> load_supervised_split(const DatasetManifest& manifest, Split split,
                                                  int height, int width) {
  std::vector<SupervisedPair> out;
  for (const auto* r : manifest.split(split)) {
    if (r->label != 1) continue;
    if (!r->mask_path) throw ConfigError("cancer record '" + r->id + "' has no mask for supervised training");
    auto p = load_preprocessed(manifest, *r, height, width);
    out.push_back({p.id, std::move(p.current), std::move(*p.gt_mask)});
  }
  return out;
}

}  // namespace ufcn

#include <filesystem>
#include <map>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "ufcn/image_io.hpp"
#include "ufcn/phantom.hpp"

using namespace ufcn;
namespace fs = std::filesystem;

namespace {

PhantomSpec small_spec(int train = 20, int val = 5, int test = 10) {
  PhantomSpec s;
  s.train_pairs = train;
  s.val_pairs = val;
  s.test_pairs = test;
  s.seed = 11;
  return s;
}

std::size_t count_on(const Tensor<std::uint8_t>& m) {
  return static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; }));
}

std::pair<double, double> centroid(const Tensor<std::uint8_t>& m) {
  double sy = 0, sx = 0, n = 0;
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j)
      if (m.at(0, i, j)) {
        sy += i;
        sx += j;
        n += 1;
      }
  return {sy / n, sx / n};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ufcn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("phantom generation is deterministic per index") {
  const auto spec = small_spec();
  for (int idx : {0, 7, 30}) {
    const auto a = generate_phantom_pair(spec, idx);
    const auto b = generate_phantom_pair(spec, idx);
    CHECK(a.id == b.id);
    CHECK(a.current.data == b.current.data);
    CHECK(a.prior.data == b.prior.data);
    CHECK(a.gt_mask->data == b.gt_mask->data);
  }
  auto other = spec;
  other.seed = 12;
  CHECK(generate_phantom_pair(other, 0).prior.data != generate_phantom_pair(spec, 0).prior.data);
}

TEST_CASE("labels match mask emptiness and pixels stay in range") {
  const auto spec = small_spec();
  for (int idx = 0; idx < spec.total_pairs(); ++idx) {
    const auto p = generate_phantom_pair(spec, idx);
    CHECK((count_on(*p.gt_mask) > 0) == (p.label == 1));
    CHECK((p.lesion_kind != LesionKind::None) == (p.label == 1));
    for (const auto* img : {&p.current, &p.prior}) {
      CHECK(*std::min_element(img->data.begin(), img->data.end()) >= 0.0f);
      CHECK(*std::max_element(img->data.begin(), img->data.end()) <= 1.0f);
    }
    for (auto v : p.gt_mask->data) CHECK(v <= 1);
  }
}

TEST_CASE("normal pairs differ only by deformation and noise") {
  const auto spec = small_spec();
  for (int idx = 0; idx < spec.train_pairs; ++idx) {
    const auto p = generate_phantom_pair(spec, idx);
    if (p.label != 0) continue;
    double sum = 0;
    for (std::size_t i = 0; i < p.current.size(); ++i) sum += std::abs(p.current.data[i] - p.prior.data[i]);
    CHECK(sum / p.current.size() < 0.05);
  }
}

TEST_CASE("cancer assignment is exact per split and cycles lesion kinds") {
  PhantomSpec spec = small_spec(200, 0, 0);
  spec.cancer_fraction = 0.4;
  int cancer = 0;
  std::map<LesionKind, int> kinds;
  for (int i = 0; i < 200; ++i) {
    const auto a = assign_phantom(spec, i);
    cancer += a.label;
    kinds[a.kind]++;
  }
  CHECK(cancer == 80);
  CHECK(kinds[LesionKind::Mass] == 27);
  CHECK(kinds[LesionKind::Calc] == 27);
  CHECK(kinds[LesionKind::Ad] == 26);

  spec = small_spec(10, 5, 20);
  spec.cancer_fraction = 0.5;
  int per_split[3] = {0, 0, 0};
  for (int i = 0; i < spec.total_pairs(); ++i) {
    const auto a = assign_phantom(spec, i);
    per_split[static_cast<int>(a.split)] += a.label;
  }
  CHECK(per_split[0] == 5);
  CHECK(per_split[1] == 3);  // round(2.5) away from zero
  CHECK(per_split[2] == 10);
}

TEST_CASE("mass mask area stays within the radius bounds") {
  LesionParams lp;
  Rng rng(5);
  const Tensor<float> base(1, 64, 64);
  Tensor<std::uint8_t> allowed(1, 64, 64);
  std::fill(allowed.data.begin(), allowed.data.end(), 1);
  const double lo = std::numbers::pi * lp.mass_radius_min * lp.mass_radius_min;
  const double hi = std::numbers::pi * lp.mass_radius_max * lp.mass_radius_max;
  for (int t = 0; t < 100; ++t) {
    const auto res = inject_lesion(base, LesionKind::Mass, lp, rng, allowed);
    const double area = static_cast<double>(count_on(res.mask));
    // lattice-point count of a disc deviates from pi r^2 by less than its perimeter
    CHECK(area >= lo - 2 * std::numbers::pi * lp.mass_radius_min);
    CHECK(area <= hi + 2 * std::numbers::pi * lp.mass_radius_max);
  }
}

TEST_CASE("zero contrast leaves the image unchanged but records support") {
  LesionParams lp;
  lp.mass_contrast = lp.calc_contrast = lp.ad_contrast = 0.0;
  const auto base = test::random_tensor<float>(1, 64, 64, 3, 0.1, 0.9);
  Tensor<std::uint8_t> allowed(1, 64, 64);
  std::fill(allowed.data.begin(), allowed.data.end(), 1);
  Rng rng(8);
  for (LesionKind k : {LesionKind::Mass, LesionKind::Calc, LesionKind::Ad}) {
    const auto res = inject_lesion(base, k, lp, rng, allowed);
    CHECK(res.image.data == base.data);
    CHECK(count_on(res.mask) > 0);
  }
  // draw_mass with exactly zero contrast
  Tensor<float> img = base;
  Tensor<std::uint8_t> mask(1, 64, 64);
  draw_mass(img, mask, 32, 32, 8, 4.8, 0.0);
  CHECK(img.data == base.data);
  CHECK(count_on(mask) > 0);
}

TEST_CASE("centred mass is symmetric under a half turn") {
  Tensor<float> img(1, 33, 33);
  Tensor<std::uint8_t> mask(1, 33, 33);
  draw_mass(img, mask, 16, 16, 8, 4.8, 0.35);
  for (int i = 0; i < 33; ++i)
    for (int j = 0; j < 33; ++j) {
      CHECK(mask.at(0, i, j) == mask.at(0, 32 - i, 32 - j));
      CHECK(img.at(0, i, j) == doctest::Approx(img.at(0, 32 - i, 32 - j)).epsilon(1e-6));
    }
  CHECK(mask.at(0, 16, 24) == 1);
  CHECK(mask.at(0, 16, 25) == 0);
}

TEST_CASE("a ten-dot calcification cluster has at most ten components") {
  LesionParams lp;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tensor<float> img(1, 48, 48);
    Tensor<std::uint8_t> mask(1, 48, 48);
    draw_calc_cluster(img, mask, 24, 24, 10, lp, rng);
    const int cc = test::connected_components(mask);
    CHECK(cc >= 1);
    CHECK(cc <= 10);
    // every dot pixel is inside the dilated mask
    for (std::size_t i = 0; i < img.size(); ++i)
      if (img.data[i] > 0) CHECK(mask.data[i] == 1);
  }
}

TEST_CASE("architectural distortion mask is exactly the painted support") {
  LesionParams lp;
  Rng rng(4);
  Tensor<float> img(1, 64, 64);
  Tensor<std::uint8_t> mask(1, 64, 64);
  draw_architectural_distortion(img, mask, 32, 32, 7, lp, rng);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK((img.data[i] > 0) == (mask.data[i] == 1));
}

TEST_CASE("lesion placement fails cleanly when nothing fits") {
  LesionParams lp;
  Rng rng(1);
  const Tensor<float> base(1, 32, 32);
  Tensor<std::uint8_t> allowed(1, 32, 32);
  CHECK_THROWS_AS(inject_lesion(base, LesionKind::Ad, lp, rng, allowed), GenerationError);
}

TEST_CASE("phantom spec validation") {
  PhantomSpec s;
  s.cancer_fraction = 1.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = PhantomSpec{};
  s.deformation_amplitude = 0.05 * s.image_size;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = PhantomSpec{};
  s.lesion.mass_contrast = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = PhantomSpec{};
  s.image_size = 64;
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("no room for lesions"), ConfigError);
  s.lesion.ad_length_max = 12;
  s.lesion.ad_length_min = 8;
  CHECK_NOTHROW(s.validate());
  CHECK(generate_phantom_pair(s, 0).current.h == 64);
}

TEST_CASE("preprocess is deterministic and normalizes to [0,1]") {
  const auto pair = generate_phantom_pair(small_spec(), 3);
  MammogramPair scaled = pair;
  for (auto& v : scaled.current.data) v = 0.2f + 0.5f * v;
  Rng r1(0), r2(0);
  const auto a = preprocess(scaled, 64, 64, false, r1);
  const auto b = preprocess(scaled, 64, 64, false, r2);
  CHECK(a.pair.current.data == b.pair.current.data);
  CHECK(a.pair.current.h == 64);
  CHECK(*std::max_element(a.pair.current.data.begin(), a.pair.current.data.end()) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(*std::min_element(a.pair.current.data.begin(), a.pair.current.data.end()) >= 0.0f);
  CHECK_FALSE(a.current_degenerate);
}

TEST_CASE("constant image normalizes to zeros with the degenerate flag") {
  MammogramPair p;
  p.id = "flat";
  p.current = Tensor<float>(1, 16, 16);
  std::fill(p.current.data.begin(), p.current.data.end(), 0.3f);
  p.prior = test::random_tensor<float>(1, 16, 16, 2, 0.0, 1.0);
  Rng rng(0);
  const auto r = preprocess(p, 16, 16, false, rng);
  CHECK(r.current_degenerate);
  CHECK_FALSE(r.prior_degenerate);
  for (float v : r.pair.current.data) CHECK(v == 0.0f);
}

TEST_CASE("preprocess rejects mismatched pairs") {
  MammogramPair p;
  p.id = "bad";
  p.current = Tensor<float>(1, 16, 16);
  p.prior = Tensor<float>(1, 16, 12);
  Rng rng(0);
  CHECK_THROWS_AS(preprocess(p, 16, 16, false, rng), ShapeError);
}

TEST_CASE("flip mirrors the lesion centroid in all three images") {
  const int n = 64;
  MammogramPair p;
  p.id = "flip";
  p.current = Tensor<float>(1, n, n);
  p.prior = Tensor<float>(1, n, n);
  Tensor<std::uint8_t> mask(1, n, n);
  draw_mass(p.current, mask, 20, 14, 6, 3.6, 0.8);
  draw_mass(p.prior, mask, 20, 14, 6, 3.6, 0.8);
  p.gt_mask = mask;
  const auto [cy, cx] = centroid(mask);
  int flips = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const Augmentation aug = sample_augmentation(rng);
    const Augmentation flip_only{aug.flip, 0.0};
    if (!flip_only.flip) continue;
    ++flips;
    const auto m = augment_mask(mask, flip_only);
    const auto [fy, fx] = centroid(m);
    CHECK(std::abs(fy - cy) <= 1.0);
    CHECK(std::abs(fx - (n - 1 - cx)) <= 1.0);
    const auto c = augment_image(p.current, flip_only);
    const auto pr = augment_image(p.prior, flip_only);
    CHECK(c.at(0, 20, n - 1 - 14) == doctest::Approx(p.current.at(0, 20, 14)));
    CHECK(pr.at(0, 20, n - 1 - 14) == doctest::Approx(p.prior.at(0, 20, 14)));
  }
  CHECK(flips > 5);

  // joint augmentation inside preprocess keeps the three images aligned
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto r = preprocess(p, n, n, true, rng);
    const auto [my, mx] = centroid(*r.pair.gt_mask);
    double sy = 0, sx = 0, w = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double v = r.pair.current.at(0, i, j);
        if (v < 0.5) continue;
        sy += v * i;
        sx += v * j;
        w += v;
      }
    CHECK(std::abs(sy / w - my) <= 1.0);
    CHECK(std::abs(sx / w - mx) <= 1.0);
    CHECK(r.pair.current.data == r.pair.prior.data);
  }
}

TEST_CASE("png round trip in 8 and 16 bit") {
  const auto dir = scratch_dir("png");
  const auto img = test::random_tensor<float>(1, 13, 17, 9, 0.0, 1.0);
  for (int depth : {8, 16}) {
    const std::string path = (dir / ("img" + std::to_string(depth) + ".png")).string();
    write_png_gray(path, img, depth);
    const auto back = read_png_gray(path);
    REQUIRE(back.h == 13);
    REQUIRE(back.w == 17);
    const double q = 0.5 / ((1 << depth) - 1);
    CHECK(test::max_abs_diff(back.data, img.data) <= q + 1e-7);
  }
  Tensor<std::uint8_t> mask(1, 5, 6);
  mask.at(0, 2, 3) = 1;
  const std::string mpath = (dir / "mask.png").string();
  write_png_mask(mpath, mask);
  CHECK(read_png_mask(mpath).data == mask.data);
  CHECK(read_png_gray(mpath).at(0, 2, 3) == 1.0f);
  CHECK_THROWS_AS(read_png_gray((dir / "missing.png").string()), LoadError);
}

TEST_CASE("dataset write and manifest load round trip") {
  const auto dir = scratch_dir("dataset");
  const auto spec = small_spec(6, 2, 4);
  const auto written = write_dataset(spec, dir.string());
  const auto loaded = load_manifest((dir / "manifest.json").string());
  CHECK(loaded.records == written.records);
  CHECK(loaded.warnings.empty());
  REQUIRE(loaded.split(Split::Test).size() == 4);

  const auto pairs = load_eval_split(loaded, Split::Test, 64, 64);
  REQUIRE(pairs.size() == 4);
  for (const auto& p : pairs) {
    CHECK(p.current.h == 64);
    CHECK(p.gt_mask.has_value());
    CHECK((count_on(*p.gt_mask) > 0) == (p.label == 1));
  }
  const auto train = load_training_split(loaded, Split::Train, 128, 128);
  const auto direct = generate_phantom_pair(spec, 0);
  CHECK(test::max_abs_diff(train[0].current.data, direct.current.data) <= 0.5 / 255 + 1e-6);

  // rewriting yields byte-identical files
  const auto dir2 = scratch_dir("dataset2");
  write_dataset(spec, dir2.string());
  for (const auto& r : written.records) {
    std::ifstream a(dir / r.current_path, std::ios::binary), b(dir2 / r.current_path, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
}

TEST_CASE("manifest validation") {
  const auto dir = scratch_dir("manifest");
  write_dataset(small_spec(2, 0, 2), dir.string());
  auto m = load_manifest((dir / "manifest.json").string());

  auto edit = [&](auto&& fn) {
    auto copy = m;
    fn(copy);
    save_manifest(copy, (dir / "edited.json").string());
    return (dir / "edited.json").string();
  };

  // a test-split cancer record without a mask only warns
  const auto no_mask = edit([](DatasetManifest& d) {
    for (auto& r : d.records)
      if (r.split == Split::Test) {
        r.label = 1;
        r.lesion_kind = LesionKind::Mass;
        r.mask_path.reset();
      }
  });
  const auto warned = load_manifest(no_mask);
  CHECK(warned.warnings.size() == 2);
  CHECK_THROWS_AS(load_supervised_split(warned, Split::Test, 128, 128), ConfigError);
  const auto eval = load_eval_split(warned, Split::Test, 128, 128);
  CHECK_FALSE(eval[0].gt_mask.has_value());

  CHECK_THROWS_AS(load_manifest(edit([](DatasetManifest& d) { d.records[1].id = d.records[0].id; })), LoadError);
  CHECK_THROWS_AS(load_manifest(edit([](DatasetManifest& d) { d.records[0].current_path = "nope.png"; })), LoadError);
  CHECK_THROWS_AS(load_manifest(edit([](DatasetManifest& d) { d.records[0].label = 2; })), LoadError);

  std::ofstream((dir / "extra.json").string()) << R"({"version":1,"records":[{"id":"a","split":"train",)"
                                               << R"("current":"x","prior":"y","label":0,"colour":"red"}]})";
  CHECK_THROWS_AS(load_manifest((dir / "extra.json").string()), LoadError);
  std::ofstream((dir / "broken.json").string()) << "{\"records\": [";
  CHECK_THROWS_AS(load_manifest((dir / "broken.json").string()), LoadError);
  CHECK_THROWS_AS(load_manifest((dir / "absent.json").string()), LoadError);
}

TEST_CASE("the training view drops the mask") {
  const auto pair = generate_phantom_pair(small_spec(), 1);
  const TrainingPair t = training_view(pair);
  CHECK(t.id == pair.id);
  CHECK(t.label == pair.label);
  CHECK(t.current.data == pair.current.data);
  CHECK(t.prior.data == pair.prior.data);
}

}  // TEST_SUITE

#include <cmath>

#include "doctest.h"
#include "mtj/heatmap.hpp"
#include "mtj/imaging.hpp"
#include "mtj/rng.hpp"

using namespace mtj;

namespace {

Frame textured(int w, int h, std::uint64_t seed) {
  Frame f(w, h);
  Rng rng(seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      f.at(x, y) = static_cast<float>(120 + 60 * std::sin(0.05 * x + 0.3) * std::cos(0.07 * y) + rng.uniform(-20, 20));
  return f;
}

double mean(const Grid& g) {
  double s = 0.0;
  for (float v : g.values()) s += v;
  return s / static_cast<double>(g.size());
}

}  // namespace

TEST_CASE("crop_resize") {
  SUBCASE("identity resample") {
    const Frame f = textured(256, 128, 1);
    const Frame out = crop_resize(f, CropSpec{0, 0, 256, 128});
    REQUIRE(out.same_shape(f));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const float a = f.values()[i], b = out.values()[i];
      CHECK((a == b || std::nextafter(a, b) == b));
    }
  }
  SUBCASE("constant source") {
    const Frame out = crop_resize(Frame(700, 400, 87.0f), CropSpec{30, 20, 600, 300});
    CHECK(out.width() == 256);
    CHECK(out.height() == 128);
    for (float v : out.values()) CHECK(v == 87.0f);
  }
  SUBCASE("mean preserved against a 2x2 area average") {
    const Frame src = textured(512, 256, 2);
    Grid oracle(256, 128);
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 256; ++x)
        oracle.at(x, y) = 0.25f * (src.at(2 * x, 2 * y) + src.at(2 * x + 1, 2 * y) + src.at(2 * x, 2 * y + 1) +
                                   src.at(2 * x + 1, 2 * y + 1));
    const Frame out = crop_resize(src, CropSpec{0, 0, 512, 256});
    CHECK(std::abs(mean(out) - mean(oracle)) < 0.01 * mean(oracle));
    CHECK(std::abs(mean(out) - mean(src)) < 0.01 * mean(src));
  }
  SUBCASE("output stays inside the source range") {
    Frame src(64, 32, 0.0f);
    for (int y = 0; y < 32; ++y)
      for (int x = 32; x < 64; ++x) src.at(x, y) = 255.0f;  // hard edge provokes cubic overshoot
    const Frame out = crop_resize(src, CropSpec{0, 0, 64, 32}, 200, 100);
    for (float v : out.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 255.0f);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(crop_resize(Frame(100, 100), CropSpec{0, 0, 200, 100}), DataError);
    CHECK_THROWS_AS(crop_resize(Frame(300, 300), CropSpec{-1, 0, 200, 100}), DataError);
  }
  SUBCASE("coordinate mapping") {
    const Point p = to_grid_coords(Point{130.0, 70.0}, CropSpec{10, 20, 512, 256});
    // Pixel centres: (130 - 10 + 0.5) * 0.5 - 0.5
    CHECK(p.x == doctest::Approx(59.75));
    CHECK(p.y == doctest::Approx(24.75));
  }
}

TEST_CASE("normalize") {
  const Frame two(2, 1, std::vector<float>{0.0f, 2.0f});
  const Frame n = normalize(two);
  CHECK(n.values()[0] == doctest::Approx(-1.0));
  CHECK(n.values()[1] == doctest::Approx(1.0));

  const Frame flat = normalize(Frame(9, 4, 3.5f));
  for (float v : flat.values()) CHECK(v == 0.0f);

  const Frame f = textured(77, 33, 5);
  const Frame z = normalize(f);
  double m = mean(z), var = 0.0;
  for (float v : z.values()) var += (v - m) * (v - m);
  var /= static_cast<double>(z.size());
  CHECK(std::abs(m) < 1e-6);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

  const Frame zz = normalize(z);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(zz.values()[i] - z.values()[i]) < 1e-6);
}

TEST_CASE("augmentation sampling") {
  CHECK(sample_augment(123) == sample_augment(123));
  CHECK_FALSE(sample_augment(123) == sample_augment(124));

  const int n = 10000;
  double rot = 0.0, lo = 1e9, hi = -1e9;
  int flips_h = 0, flips_v = 0;
  for (int i = 0; i < n; ++i) {
    const AugmentParams p = sample_augment(derive_seed(77, i));
    CHECK(p.in_range());
    rot += p.rotation_deg;
    lo = std::min(lo, p.rotation_deg);
    hi = std::max(hi, p.rotation_deg);
    flips_h += p.flip_h;
    flips_v += p.flip_v;
  }
  CHECK(lo >= -20.0);
  CHECK(hi <= 20.0);
  CHECK(std::abs(rot / n) <= 0.6);
  CHECK(flips_h >= 0.48 * n);
  CHECK(flips_h <= 0.52 * n);
  CHECK(flips_v >= 0.48 * n);
  CHECK(flips_v <= 0.52 * n);
}

TEST_CASE("apply_augment") {
  const Frame frame = textured(256, 128, 9);
  const ProbabilityMap map = make_soft_label(Point{60.0, 30.0}, 256, 128);

  SUBCASE("identity") {
    const auto [f, m] = apply_augment(frame, map, AugmentParams{});
    CHECK(f == frame);
    CHECK(m == map);
  }
  SUBCASE("horizontal flip") {
    AugmentParams p;
    p.flip_h = true;
    const auto [f, m] = apply_augment(frame, map, p);
    const Peak pk = peak(m);
    CHECK(pk.position.x == 195.0);
    CHECK(pk.position.y == 30.0);
    CHECK(f.at(0, 5) == frame.at(255, 5));
    const auto [f2, m2] = apply_augment(f, m, p);
    CHECK(f2 == frame);
    CHECK(m2 == map);
  }
  SUBCASE("flips are an involution") {
    AugmentParams p;
    p.flip_h = true;
    p.flip_v = true;
    const auto once = apply_augment(frame, map, p);
    const auto twice = apply_augment(once.first, once.second, p);
    CHECK(twice.first == frame);
    CHECK(twice.second == map);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(apply_augment(frame, ProbabilityMap(128, 64), AugmentParams{}), DataError);
  }
  SUBCASE("map values stay in [0, 1]") {
    const auto [f, m] = apply_augment(frame, map, sample_augment(5));
    for (float v : m.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("peak transport under random transforms") {
  const int w = 256, h = 128;
  const double sigma = 10.0;
  auto inside = [&](Point p, double margin) {
    return p.x >= margin && p.x <= w - 1 - margin && p.y >= margin && p.y <= h - 1 - margin;
  };
  Rng rng(2024);
  int tested = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Point src{std::round(rng.uniform(20, 235)), std::round(rng.uniform(20, 107))};
    const AugmentParams params = sample_augment(derive_seed(31, i));
    const Affine t = augment_transform(params, w, h);
    const Point expected = t.apply(src);
    if (!inside(expected, sigma)) continue;
    // Reflective fill creates mirrored copies of the peak; skip draws where one lands in view.
    bool ghost = false;
    for (double mx : {-1.0 - src.x, src.x, 2.0 * w - 1.0 - src.x})
      for (double my : {-1.0 - src.y, src.y, 2.0 * h - 1.0 - src.y}) {
        if (mx == src.x && my == src.y) continue;
        if (inside(t.apply(Point{mx, my}), -sigma)) ghost = true;
      }
    if (ghost) continue;
    ++tested;
    const auto [f, m] = apply_augment(Frame(w, h), make_soft_label(src, w, h), params);
    const Peak pk = peak(m);
    const double d = std::hypot(pk.position.x - expected.x, pk.position.y - expected.y);
    worst = std::max(worst, d);
    CHECK(d <= 1.5);
  }
  MESSAGE(tested << " transforms tested, worst " << worst << " px");
  CHECK(tested >= 300);
}

TEST_CASE("affine inverse") {
  const Affine t = augment_transform(sample_augment(8), 256, 128);
  const Affine inv = t.inverse();
  const Point p{17.25, 99.5};
  const Point back = inv.apply(t.apply(p));
  CHECK(back.x == doctest::Approx(p.x).epsilon(1e-12));
  CHECK(back.y == doctest::Approx(p.y).epsilon(1e-12));
}

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mtj/heatmap.hpp"
#include "mtj/rng.hpp"

using namespace mtj;

namespace {

bool within_one_ulp(float a, float b) { return a == b || std::nextafter(a, b) == b; }

}  // namespace

TEST_CASE("soft label values") {
  const ProbabilityMap m = make_soft_label(Point{100.0, 60.0}, 256, 128);
  CHECK(m.at(100, 60) == 1.0f);
  CHECK(m.at(110, 60) == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(m.at(100, 40) == doctest::Approx(0.13534).epsilon(1e-4));
  CHECK(m.at(100, 70) == doctest::Approx(std::exp(-0.5)).epsilon(1e-6));
  for (float v : m.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  const ProbabilityMap empty = make_soft_label(std::nullopt, 256, 128);
  for (float v : empty.values()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(make_soft_label(Point{256.0, 5.0}, 256, 128), DataError);
  CHECK_THROWS_AS(make_soft_label(Point{5.0, -0.1}, 256, 128), DataError);
}

TEST_CASE("soft label is radially symmetric") {
  const ProbabilityMap m = make_soft_label(Point{50.0, 50.0}, 128, 128);
  // Integer offsets sharing a squared radius.
  const int groups[][4][2] = {
      {{3, 4}, {4, 3}, {5, 0}, {0, -5}},
      {{5, 12}, {12, 5}, {13, 0}, {-13, 0}},
      {{6, 8}, {-8, 6}, {10, 0}, {0, 10}},
      {{7, 24}, {-24, -7}, {0, 25}, {15, 20}},
  };
  for (const auto& g : groups) {
    const float ref = m.at(50 + g[0][0], 50 + g[0][1]);
    for (const auto& o : g) CHECK(within_one_ulp(m.at(50 + o[0], 50 + o[1]), ref));
  }
}

TEST_CASE("peak extraction") {
  SUBCASE("soft label") {
    const Peak p = peak(make_soft_label(Point{100.0, 60.0}, 256, 128));
    CHECK(p.position == Point{100.0, 60.0});
    CHECK(p.value == 1.0f);
  }
  SUBCASE("all zero") {
    const Peak p = peak(Grid(20, 10));
    CHECK(p.position == Point{0.0, 0.0});
    CHECK(p.value == 0.0f);
  }
  SUBCASE("ties go to the smaller y then x") {
    Grid g(12, 12);
    g.at(5, 9) = 0.7f;
    g.at(5, 5) = 0.7f;
    CHECK(peak(g).position == Point{5.0, 5.0});
    g.at(2, 5) = 0.7f;
    CHECK(peak(g).position == Point{2.0, 5.0});
  }
  SUBCASE("peak of a soft label is the rounded position") {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
      const Point p{rng.uniform(1.0, 254.0), rng.uniform(1.0, 126.0)};
      const Peak pk = peak(make_soft_label(p, 256, 128));
      CHECK(pk.position.x == std::round(p.x));
      CHECK(pk.position.y == std::round(p.y));
    }
  }
}

TEST_CASE("pmap files") {
  const auto dir = std::filesystem::temp_directory_path() / "mtj_test_heatmap";
  std::filesystem::create_directories(dir);
  const ProbabilityMap m = make_soft_label(Point{10.5, 3.25}, 32, 16);
  save_pmap(dir / "m.pmap", m);
  CHECK(std::filesystem::file_size(dir / "m.pmap") == 8 + 32 * 16 * 4);
  CHECK(load_pmap(dir / "m.pmap") == m);

  std::ifstream in(dir / "m.pmap", std::ios::binary);
  unsigned char header[8];
  in.read(reinterpret_cast<char*>(header), 8);
  CHECK(header[0] == 32);
  CHECK(header[1] == 0);
  CHECK(header[4] == 16);

  std::ofstream(dir / "m.pmap", std::ios::app | std::ios::binary) << "junk";
  CHECK_THROWS_AS(load_pmap(dir / "m.pmap"), DataError);
  std::filesystem::resize_file(dir / "m.pmap", 20);
  CHECK_THROWS_AS(load_pmap(dir / "m.pmap"), DataError);
}

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mtj/heatmap.hpp"
#include "mtj/imaging.hpp"
#include "mtj/network.hpp"
#include "mtj/rng.hpp"

using namespace mtj;

namespace {

NetworkConfig small_config(int depth = 2, int base = 4, int w = 32, int h = 16, std::uint64_t seed = 0) {
  NetworkConfig c;
  c.depth = depth;
  c.base_filters = base;
  c.input_w = w;
  c.input_h = h;
  c.rng_seed = seed;
  return c;
}

Frame random_frame(int w, int h, std::uint64_t seed) {
  Frame f(w, h);
  Rng rng(seed);
  for (float& v : f.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
  return normalize(f);
}

// Closed-form parameter count of the attention U-Net with 3x3 kernels.
std::size_t expected_parameters(int depth, int base) {
  auto f = [&](int l) { return static_cast<std::size_t>(base) << l; };
  std::size_t n = 0;
  std::size_t cin = 1;
  for (int l = 0; l < depth; ++l) {
    n += f(l) * cin * 9 + f(l) + f(l) * f(l) * 9 + f(l);
    cin = f(l);
  }
  n += f(depth) * cin * 9 + f(depth) + f(depth) * f(depth) * 9 + f(depth);
  for (int l = 0; l < depth; ++l) {
    const std::size_t i = std::max<std::size_t>(1, f(l) / 2);
    n += f(l) * f(l + 1) * 9 + f(l);      // upsampling convolution
    n += i * f(l) * 4;                    // skip projection
    n += i * f(l + 1) + i;                // gating projection
    n += i + 1;                           // coefficient projection
    n += f(l) * 2 * f(l) * 9 + f(l);      // first block convolution on the concatenation
    n += f(l) * f(l) * 9 + f(l);
  }
  return n + f(0) + 1;
}

// Recorded from this implementation; guards against silent changes to the forward pass.
constexpr double kGoldenSum = 247.951590151;

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(NetworkConfig{}.validate());
  CHECK_THROWS_AS(small_config(2, 4, 30, 16).validate(), UsageError);
  CHECK_THROWS_AS(small_config(0, 4).validate(), UsageError);
  CHECK_THROWS_AS(small_config(2, 0).validate(), UsageError);
}

TEST_CASE("init_weights is deterministic with zero biases and doubling filters") {
  const NetworkConfig c = small_config(3, 8, 64, 32, 7);
  const ModelWeights a = init_weights(c);
  const ModelWeights b = init_weights(c);
  CHECK(a == b);
  CHECK_FALSE(a == init_weights(small_config(3, 8, 64, 32, 8)));
  for (const auto& t : a.tensors)
    if (t.spec.shape.size() == 1)
      for (float v : t.values) CHECK(v == 0.0f);

  NetworkConfig defaults;
  CHECK(defaults.filters(0) == 64);
  CHECK(defaults.filters(1) == 128);
  CHECK(defaults.filters(2) == 256);
  CHECK(defaults.filters(3) == 512);
  const auto manifest = layer_manifest(defaults);
  for (int l = 0; l < 4; ++l) {
    const auto it = std::find_if(manifest.begin(), manifest.end(), [&](const LayerSpec& s) {
      return s.path == "enc" + std::to_string(l) + "/conv2/w";
    });
    REQUIRE(it != manifest.end());
    CHECK(it->shape[0] == 64 << l);
  }
}

TEST_CASE("kernels are fan-in scaled uniform draws") {
  const ModelWeights w = init_weights(small_config(2, 8, 32, 16, 3));
  const auto& t = w.at("enc1/conv2/w");
  const double limit = std::sqrt(6.0 / (8 * 2 * 9));  // fan-in of a 16 <- 16 3x3 kernel is 144
  double lo = 1e9, hi = -1e9, mean = 0.0;
  for (float v : t.values) {
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
    mean += v;
  }
  mean /= static_cast<double>(t.values.size());
  CHECK(lo >= -limit);
  CHECK(hi <= limit);
  CHECK(hi > 0.9 * limit);
  CHECK(std::abs(mean) < 0.05 * limit);
}

TEST_CASE("parameter count matches the closed form") {
  CHECK(layer_manifest(NetworkConfig{}).size() > 0);
  std::size_t full_size = 0;
  for (const auto& s : layer_manifest(NetworkConfig{})) full_size += s.size();
  CHECK(full_size == expected_parameters(4, 64));
  CHECK(full_size == 35557637u);
  CHECK(init_weights(small_config(3, 16, 128, 64)).parameter_count() == expected_parameters(3, 16));
  CHECK(init_weights(small_config(2, 4)).parameter_count() == expected_parameters(2, 4));
}

TEST_CASE("forward output shape and range") {
  const ModelWeights w = init_weights(small_config(3, 4, 64, 32, 1));
  const ProbabilityMap p = forward(w, random_frame(64, 32, 2));
  CHECK(p.width() == 64);
  CHECK(p.height() == 32);
  for (float v : p.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK_THROWS_AS(forward(w, random_frame(32, 32, 2)), DataError);
}

TEST_CASE("full-size network produces a 256x128 map") {
  NetworkConfig c;
  c.base_filters = 4;  // full depth and resolution, reduced width to keep the test quick
  const ModelWeights w = init_weights(c);
  const ProbabilityMap p = forward(w, random_frame(256, 128, 5));
  CHECK(p.width() == 256);
  CHECK(p.height() == 128);
}

TEST_CASE("zero head gives one half everywhere") {
  ModelWeights w = init_weights(small_config());
  for (float& v : w.at("head/w").values) v = 0.0f;
  for (float& v : w.at("head/b").values) v = 0.0f;
  const ProbabilityMap p = forward(w, random_frame(32, 16, 4));
  for (float v : p.values()) CHECK(v == 0.5f);
}

TEST_CASE("non-finite weights are rejected") {
  ModelWeights w = init_weights(small_config());
  w.at("enc0/conv1/w").values[3] = std::nanf("");
  CHECK_FALSE(w.all_finite());
  CHECK_THROWS(forward(w, random_frame(32, 16, 4)));
}

TEST_CASE("attention gate on a hand-computed 2x2 toy") {
  GateInput in;
  in.channels = 1;
  in.gating_channels = 1;
  in.height = 2;
  in.width = 2;
  in.skip = {1, 2, 3, 4};
  in.gating = {0.5};
  in.theta = {0.25, 0.25, 0.25, 0.25};  // mean of the 2x2 block: 2.5
  in.phi = {1.0};
  in.phi_bias = {0.0};                   // 0.5
  in.psi = {0.5};
  in.psi_bias = {-1.0};                  // 0.5 * relu(2.5 + 0.5) - 1 = 0.5
  const GateOutput out = attention_gate(in);
  const double alpha = 1.0 / (1.0 + std::exp(-0.5));  // 0.6224593312018546
  REQUIRE(out.coefficients.size() == 1);
  CHECK(out.coefficients[0] == doctest::Approx(0.6224593312).epsilon(1e-9));
  const double expected[4] = {0.6224593312, 1.2449186624, 1.8673779936, 2.4898373248};
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(out.gated[i] - expected[i]) < 1e-6);
    CHECK(std::abs(out.gated[i] - alpha * in.skip[i]) < 1e-12);
  }

  SUBCASE("saturated coefficients pass the skip through") {
    in.psi_bias = {60.0};
    const GateOutput o = attention_gate(in);
    for (int i = 0; i < 4; ++i) CHECK(o.gated[i] == doctest::Approx(in.skip[i]).epsilon(1e-12));
  }
  SUBCASE("vanishing coefficients zero the skip") {
    in.psi_bias = {-800.0};
    const GateOutput o = attention_gate(in);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(o.gated[i]) < 1e-300);
  }
  SUBCASE("shape mismatch") {
    in.gating = {0.5, 0.5};
    CHECK_THROWS_AS(attention_gate(in), DataError);
  }
}

TEST_CASE("gradients match central differences in 64-bit mode") {
  const NetworkConfig c = small_config(2, 4, 32, 16, 11);
  const WeightsT<double> w = init_weights(c).cast<double>();
  const Frame frame = random_frame(32, 16, 12);
  const ProbabilityMap target = make_soft_label(Point{20.0, 7.0}, 32, 16);
  const double w0 = 0.1;
  const WeightsT<double> g = backward(w, frame, target, w0);
  CHECK(g.tensors.size() == w.tensors.size());
  for (std::size_t t = 0; t < g.tensors.size(); ++t) CHECK(g.tensors[t].spec == w.tensors[t].spec);

  auto loss = [&](const WeightsT<double>& ww) {
    WeightsT<double> scratch = ww.zeros_like();
    return accumulate_gradients(ww, frame, target, w0, scratch);
  };
  Rng rng(99);
  const double h = 1e-6;
  double worst = 0.0;
  for (int probe = 0; probe < 50; ++probe) {
    const std::size_t t = rng.below(w.tensors.size());
    const std::size_t i = rng.below(w.tensors[t].values.size());
    WeightsT<double> plus = w, minus = w;
    plus.tensors[t].values[i] += h;
    minus.tensors[t].values[i] -= h;
    const double numeric = (loss(plus) - loss(minus)) / (2 * h);
    const double analytic = g.tensors[t].values[i];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    worst = std::max(worst, rel);
  }
  MESSAGE("max relative error " << worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient vanishes when the target equals the output") {
  WeightsT<double> w = init_weights(small_config(2, 4, 32, 16, 5)).cast<double>();
  for (double& v : w.at("head/w").values) v = 0.0;
  const Frame frame = random_frame(32, 16, 6);
  const Grid target(32, 16, 0.5f);  // the zeroed head outputs exactly 0.5
  const WeightsT<double> g = backward(w, frame, target, 1.0);
  for (const auto& t : g.tensors)
    for (double v : t.values) CHECK(v == 0.0);
}

TEST_CASE("golden forward checksum") {
  const ModelWeights w = init_weights(small_config(2, 4, 32, 16, 0));
  Frame input(32, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x) input.at(x, y) = static_cast<float>(std::sin(0.3 * x) * std::cos(0.5 * y));
  const ProbabilityMap p = forward(w, input);
  double sum = 0.0;
  for (float v : p.values()) sum += v;
  MESSAGE("checksum " << std::setprecision(12) << sum << " first " << p.values()[0] << " last " << p.values()[511]);
  CHECK(sum == doctest::Approx(kGoldenSum).epsilon(1e-5));
}

TEST_CASE("weights round-trip through .mtjw") {
  const auto dir = std::filesystem::temp_directory_path() / "mtj_test_network";
  std::filesystem::create_directories(dir);
  const ModelWeights w = init_weights(small_config(2, 4, 32, 16, 21));
  save_weights(dir / "w.mtjw", w);
  CHECK(load_weights(dir / "w.mtjw") == w);

  SUBCASE("trailing bytes are rejected") {
    std::ofstream(dir / "w.mtjw", std::ios::app | std::ios::binary) << 'x';
    CHECK_THROWS_AS(load_weights(dir / "w.mtjw"), DataError);
  }
  SUBCASE("truncation is rejected") {
    std::filesystem::resize_file(dir / "w.mtjw", std::filesystem::file_size(dir / "w.mtjw") - 4);
    CHECK_THROWS_AS(load_weights(dir / "w.mtjw"), DataError);
  }
  SUBCASE("bad magic is rejected") {
    std::ofstream(dir / "bad.mtjw", std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(load_weights(dir / "bad.mtjw"), DataError);
  }
}

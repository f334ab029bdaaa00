#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtj/grid.hpp"

namespace mtj {

/// Attention U-Net hyper-parameters.
struct NetworkConfig {
  int depth = 4;          ///< number of 2x2 max-pooling stages
  int base_filters = 64;  ///< filters at the first level, doubled per level
  int input_w = 256;
  int input_h = 128;
  int kernel_size = 3;
  std::uint64_t rng_seed = 0;

  /// Throws UsageError when the configuration cannot form a network.
  void validate() const;

  /// Filter count at encoder level `level` (level == depth is the bottleneck).
  int filters(int level) const { return base_filters << level; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Name and shape of one trainable tensor, in manifest order.
struct LayerSpec {
  std::string path;
  std::vector<int> shape;

  std::size_t size() const;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Ordered list of every trainable tensor for a configuration.
std::vector<LayerSpec> layer_manifest(const NetworkConfig& config);

template <class T>
struct ParamTensor {
  LayerSpec spec;
  std::vector<T> values;

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

/// Parameter container; also used for gradients and optimizer moments.
template <class T>
struct WeightsT {
  NetworkConfig config;
  std::vector<ParamTensor<T>> tensors;

  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Index of the tensor at `path`; throws DataError if absent.
  std::size_t index_of(const std::string& path) const;
  ParamTensor<T>& at(const std::string& path) { return tensors[index_of(path)]; }
  const ParamTensor<T>& at(const std::string& path) const { return tensors[index_of(path)]; }

  /// Same structure, all values zero.
  WeightsT zeros_like() const;

  template <class U>
  WeightsT<U> cast() const {
    WeightsT<U> out;
    out.config = config;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back({t.spec, std::vector<U>(t.values.begin(), t.values.end())});
    return out;
  }

  friend bool operator==(const WeightsT&, const WeightsT&) = default;
};

using ModelWeights = WeightsT<float>;
using Gradients = WeightsT<float>;

/// Fan-in scaled uniform kernels (He), zero biases; deterministic in config.rng_seed.
ModelWeights init_weights(const NetworkConfig& config);

/// Runs the network on a normalized frame; output values lie in (0, 1).
template <class T>
ProbabilityMap forward(const WeightsT<T>& weights, const Grid& frame);

/// Raw pre-sigmoid output, same grid as the input.
template <class T>
std::vector<T> forward_logits(const WeightsT<T>& weights, const Grid& frame);

/// Loss and its gradient for one (frame, target) pair under the weighted
/// binary cross-entropy used for training. Gradients are accumulated into
/// `grads` (which must have the structure of `weights`); the loss is returned.
template <class T>
double accumulate_gradients(const WeightsT<T>& weights, const Grid& frame, const Grid& target, double zero_class_weight,
                            WeightsT<T>& grads, T grad_scale = T(1));

/// Gradient of the weighted BCE loss with respect to every parameter.
template <class T>
WeightsT<T> backward(const WeightsT<T>& weights, const Grid& frame, const Grid& target, double zero_class_weight);

/// Additive attention gate applied to one skip tensor, exposed for testing.
///
/// `skip` is [channels, h, w], `gating` is [gating_channels, h/2, w/2]. Weight
/// shapes: theta [inter, channels, 2, 2], phi [inter, gating_channels, 1, 1] with
/// bias [inter], psi [1, inter, 1, 1] with bias [1].
struct GateInput {
  int channels = 0;
  int gating_channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> skip;
  std::vector<double> gating;
  std::vector<double> theta;
  std::vector<double> phi;
  std::vector<double> phi_bias;
  std::vector<double> psi;
  std::vector<double> psi_bias;
};

struct GateOutput {
  std::vector<double> gated;         ///< [channels, h, w]
  std::vector<double> coefficients;  ///< [h/2, w/2], each in (0, 1)
};

GateOutput attention_gate(const GateInput& input);

/// `.mtjw`: magic "MTJW", u32 version, u64 header length, JSON header, then
/// float32 little-endian tensors in manifest order.
void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace mtj

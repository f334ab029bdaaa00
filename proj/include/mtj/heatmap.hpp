#pragma once

#include <filesystem>
#include <optional>
#include <utility>

#include "mtj/grid.hpp"

namespace mtj {

/// Isotropic label covariance (px^2); the kernel is exp(-d^2 / (2 * kLabelVariance)).
inline constexpr double kLabelVariance = 100.0;

/// Unnormalized Gaussian target with peak 1 at `position`; all zeros if absent.
/// Throws DataError if the position lies outside [0, width) x [0, height).
ProbabilityMap make_soft_label(const std::optional<Point>& position, int width, int height);

struct Peak {
  Point position;
  float value = 0.0f;
};

/// Maximum value and its pixel; ties go to the smallest y, then smallest x.
Peak peak(const Grid& map);

/// Debug raster: u32 width, u32 height, then float32 values, all little-endian.
void save_pmap(const std::filesystem::path& path, const Grid& map);
ProbabilityMap load_pmap(const std::filesystem::path& path);

}  // namespace mtj

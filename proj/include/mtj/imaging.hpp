#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "mtj/grid.hpp"

namespace mtj {

/// Crop rectangle in source pixels; width must be exactly twice the height.
struct CropSpec {
  int x = 0;
  int y = 0;
  int w = 256;
  int h = 128;

  bool has_two_to_one_ratio() const { return w == 2 * h; }
  friend bool operator==(const CropSpec&, const CropSpec&) = default;
};

/// Bicubic (Keys, a = -0.5) crop-and-resample. Output values are clamped to
/// the value range of the crop. Throws DataError if the crop leaves the frame.
Frame crop_resize(const Frame& frame, const CropSpec& crop, int out_w = 256, int out_h = 128);

/// Maps a raw-instrument coordinate into the resized crop grid.
Point to_grid_coords(Point raw, const CropSpec& crop, int out_w = 256, int out_h = 128);

/// Zero mean, unit population standard deviation; constant input maps to zeros.
Frame normalize(const Frame& frame);
inline constexpr double kNormalizeEpsilon = 1e-12;

struct AugmentParams {
  double rotation_deg = 0.0;  ///< [-20, 20]
  double zoom = 1.0;          ///< [0.7, 1.3]
  double shear = 0.0;         ///< [-0.2, 0.2], shear angle in radians
  double shift_x = 0.0;       ///< [-0.1, 0.1] of image width
  double shift_y = 0.0;       ///< [-0.1, 0.1] of image height
  bool flip_h = false;
  bool flip_v = false;

  bool in_range() const;
  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

inline constexpr double kMaxRotationDeg = 20.0;
inline constexpr double kMinZoom = 0.7;
inline constexpr double kMaxZoom = 1.3;
inline constexpr double kMaxShear = 0.2;
inline constexpr double kMaxShift = 0.1;

AugmentParams sample_augment(std::uint64_t seed);

/// 2x3 affine map in pixel coordinates: p' = M * [x, y, 1].
struct Affine {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point apply(Point p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }
  Affine inverse() const;
};

/// Forward transform about the image centre: rotation, then shear, zoom, shift and flips.
Affine augment_transform(const AugmentParams& params, int width, int height);

/// Warps frame and map with the same transform (bilinear, reflect fill);
/// the map is re-clamped to [0, 1].
std::pair<Frame, ProbabilityMap> apply_augment(const Frame& frame, const ProbabilityMap& map,
                                               const AugmentParams& params);

/// Inverse-mapped bilinear warp with reflective borders.
Grid warp_reflect(const Grid& src, const Affine& forward);

}  // namespace mtj

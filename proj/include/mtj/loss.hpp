#pragma once

#include <algorithm>
#include <cmath>

namespace mtj {

/// Predictions are clipped to [kProbClip, 1 - kProbClip] before the logarithm.
inline constexpr double kProbClip = 1e-7;

/// Pixels whose soft target is below one half belong to the 0 class.
inline double class_weight(double target, double zero_class_weight) {
  return target < 0.5 ? zero_class_weight : 1.0;
}

/// Weighted binary cross-entropy of a single pixel.
inline double weighted_bce_pixel(double prob, double target, double zero_class_weight) {
  const double p = std::clamp(prob, kProbClip, 1.0 - kProbClip);
  const double w = class_weight(target, zero_class_weight);
  return -(w * target * std::log(p) + w * (1.0 - target) * std::log(1.0 - p));
}

/// d(weighted_bce_pixel(sigmoid(z)))/dz, zero where the clip is active.
inline double weighted_bce_logit_grad(double prob, double target, double zero_class_weight) {
  if (prob < kProbClip || prob > 1.0 - kProbClip) return 0.0;
  return class_weight(target, zero_class_weight) * (prob - target);
}

}  // namespace mtj

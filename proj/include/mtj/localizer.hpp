#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtj/grid.hpp"

namespace mtj {

/// Rotated elliptical Gaussian on a constant offset:
///   A * exp(-(a dx^2 + 2 b dx dy + c dy^2)) + d.
struct GaussParams {
  double A = 0.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;
  double d = 0.0;

  std::array<double, 7> to_array() const { return {A, x0, y0, sigma_x, sigma_y, theta, d}; }
  static GaussParams from_array(std::span<const double, 7> v) { return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]}; }
  bool finite() const;
  double operator()(double x, double y) const;
};

/// Rasterizes the model onto a width x height grid.
Grid render_gaussian(const GaussParams& params, int width, int height);

/// Partial derivatives of the model with respect to (A, x0, y0, sigma_x,
/// sigma_y, theta, d) at every pixel; column-major, out.size() == 7 * w * h.
void gaussian_jacobian(const GaussParams& params, int width, int height, std::span<double> out);

/// sigma_x >= sigma_y, theta wrapped to (-pi/2, pi/2].
GaussParams canonicalize(GaussParams p);

struct GaussBounds {
  GaussParams lower;
  GaussParams upper;

  static GaussBounds for_map(int width, int height);
};

/// Starting point: A = max - 2 SD, centre at the argmax, sigma = 5 SD,
/// theta = d = 0, with SD the standard deviation of the map values.
GaussParams init_guess(const Grid& map);
/// A <= 0 or sigma <= 0; the fit is skipped for such starts.
bool is_degenerate(const GaussParams& init);

struct GaussFit {
  GaussParams params;
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0.0;  ///< 0.5 * sum of squared residuals at the start
  double cost = 0.0;
};

/// Bounded least-squares fit by the trust-region reflective method.
/// Throws NumericError for non-finite maps or a degenerate start.
GaussFit fit_gaussian(const Grid& map, const GaussParams& init, const GaussBounds& bounds);

struct Prediction {
  Point position;
  double confidence = 0.0;  ///< max of the map
  GaussParams gauss;
  bool fit_converged = false;
};

/// Fitted centre rounded to the nearest pixel, or the argmax when the fit is
/// skipped, fails, or the fitted peak is not distinguishable from the residual.
Prediction locate(const Grid& map);

enum class FilterCase { none, border, low_confidence_pad, specialist_inconsistent };
std::string_view to_string(FilterCase c);
FilterCase parse_filter_case(std::string_view s);

struct FilterVerdict {
  bool kept = true;
  FilterCase filter_case = FilterCase::none;

  friend bool operator==(const FilterVerdict&, const FilterVerdict&) = default;
};

inline constexpr int kBorderPadding = 10;
inline constexpr double kLowConfidence = 0.25;
inline constexpr double kInconsistencyFactor = 20.0;
inline constexpr int kInconsistentSpecialists = 3;

/// Error cases driven by the model output: predictions on the border, and
/// low-confidence predictions inside the 10 px padding.
FilterVerdict filter_prediction(const Prediction& pred, int width, int height);

/// Excluded when at least three specialists lie more than 20 * sigma_bar from
/// the reference. Throws DataError for fewer than two specialists.
FilterVerdict filter_specialist_frame(std::span<const Point> specialists, Point reference, double sigma_bar);

/// One row of the predictions CSV.
struct PredictionRow {
  std::string video_id;
  int frame_idx = 0;
  Prediction prediction;
  FilterCase filter_case = FilterCase::none;
};

inline constexpr std::string_view kPredictionsHeader =
    "video_id,frame_idx,x_px,y_px,confidence,fit_converged,filter_case";

std::string format_predictions(std::span<const PredictionRow> rows);
/// Parses positions, confidences, flags and cases (Gaussian parameters are not stored).
std::vector<PredictionRow> parse_predictions(std::string_view csv_text);

}  // namespace mtj

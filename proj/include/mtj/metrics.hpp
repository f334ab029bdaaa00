#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mtj/dataio.hpp"
#include "mtj/grid.hpp"
#include "mtj/localizer.hpp"

namespace mtj {

struct FrameKey {
  std::string video_id;
  int frame_idx = 0;

  friend auto operator<=>(const FrameKey&, const FrameKey&) = default;
  friend bool operator==(const FrameKey&, const FrameKey&) = default;
};

/// Coordinate-wise mean of the specialist positions; needs at least two.
Point reference_label(std::span<const Point> specialists);

/// Leave-one-out deviation of one frame: the distance of each specialist to
/// the mean of the remaining ones, and the mean of those distances.
struct LooDeviation {
  std::vector<double> fold_distances;
  double mean = 0.0;
};
/// Needs at least three specialists.
LooDeviation loo_specialist_deviation(std::span<const Point> specialists);

/// Per-frame agreement among specialists.
struct FrameAgreement {
  FrameKey key;
  Point reference;
  std::vector<Point> specialists;
  std::vector<double> distances;  ///< each specialist to the reference
  double loo_deviation = 0.0;
  double sigma = 0.0;  ///< sample SD of `distances`
};
FrameAgreement frame_agreement(FrameKey key, std::span<const Point> specialists);

/// Aggregate specialist spread: mean LOO deviation and mean per-frame sigma.
struct SpecialistSummary {
  std::size_t n_frames = 0;
  double d_bar = 0.0;
  double sigma_bar = 0.0;
};
SpecialistSummary summarize_specialists(std::span<const FrameAgreement> frames);

/// Two-way ANOVA mean squares of an n x k table.
struct AnovaTable {
  int n = 0;
  int k = 0;
  double ms_rows = 0.0;
  double ms_cols = 0.0;
  double ms_error = 0.0;
};
AnovaTable two_way_anova(const Eigen::MatrixXd& ratings);

struct IccResult {
  double icc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  AnovaTable anova;
};
/// ICC(A,k), absolute agreement of the mean of k raters, with a (1 - alpha)
/// confidence interval. Needs n >= 5 rows and k >= 2 columns; throws
/// NumericError when the interval is undefined (zero residual variance with
/// differing rater means).
IccResult icc_a_k(const Eigen::MatrixXd& ratings, double alpha = 0.05);

struct ErrorStats {
  std::size_t n = 0;
  double rmse = 0.0;
  double sem = 0.0;  ///< sample SD / sqrt(n); 0 for a single value
  double mae = 0.0;
};
ErrorStats error_stats(std::span<const Point> model, std::span<const Point> reference, double spacing_mm);
ErrorStats error_stats_from_distances(std::span<const double> distances);

struct BlandAltman {
  double bias = 0.0;
  double sd = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
  std::vector<std::pair<double, double>> pairs;  ///< (normalized mean, difference)
};
BlandAltman bland_altman(std::span<const double> model, std::span<const double> reference, double extent);

struct TolerancePoint {
  double n_star = 0.0;
  double model_pct = 0.0;
  double specialist_pct = 0.0;
};
/// `specialist_distances[k][i]` is specialist k's distance to the reference on frame i.
std::vector<TolerancePoint> tolerance_curve(std::span<const double> model_distances,
                                            const std::vector<std::vector<double>>& specialist_distances,
                                            double sigma_bar, std::span<const double> n_grid);
std::vector<double> default_tolerance_grid();

enum class Grouping { muscle, movement, instrument };
std::string_view to_string(Grouping g);
/// Throws UsageError for an unknown key.
Grouping parse_grouping(std::string_view s);

struct EvalFrame {
  FrameKey key;
  Point model;
  Point reference;
  double spacing_mm = kSyntheticPixelSpacingMm;
  Instrument instrument = Instrument::SyntheticA;
  Muscle muscle = Muscle::MG;
  Movement movement = Movement::MVC;
};

struct GroupStats {
  std::string group;
  ErrorStats stats;
};
struct Breakdown {
  Grouping grouping = Grouping::instrument;
  std::vector<GroupStats> groups;
  std::vector<std::string> empty_groups;
};
Breakdown breakdown(std::span<const EvalFrame> frames, Grouping grouping);

/// Distance in mm between model and reference for one frame.
double distance_mm(const EvalFrame& f);

struct ExclusionCounts {
  int border = 0;
  int low_confidence_pad = 0;
  int specialist_inconsistent = 0;

  int total() const { return border + low_confidence_pad + specialist_inconsistent; }
};

/// Everything `evaluate` reports, serializable to and from JSON.
struct EvaluationReport {
  int n_total = 0;   ///< frames before filtering
  int n_frames = 0;  ///< frames kept
  ExclusionCounts exclusions;
  double sigma_bar_all_px = 0.0;  ///< over all frames; scales the inconsistency filter
  double sigma_bar_px = 0.0;      ///< over kept frames; scales the tolerance axis
  double d_bar_px = 0.0;
  double d_bar_mm = 0.0;
  ErrorStats model_mm;
  double specialist_rmse_mm_mean = 0.0;
  double specialist_rmse_mm_sd = 0.0;
  std::optional<IccResult> icc;
  int icc_raters = 0;
  BlandAltman bland_altman_x;
  BlandAltman bland_altman_y;
  std::vector<TolerancePoint> tolerance;
  std::vector<Breakdown> breakdowns;
  std::vector<double> model_distances_mm;
  std::vector<double> specialist_loo_distances_mm;
  std::vector<std::string> notes;
};

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view json_text);

}  // namespace mtj

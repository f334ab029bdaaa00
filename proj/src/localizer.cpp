#include "mtj/localizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mtj/dataio.hpp"
#include "mtj/heatmap.hpp"
#include "mtj/trf.hpp"

namespace mtj {

namespace {

constexpr double kPi = std::numbers::pi;

struct QuadForm {
  double a, b, c;
};

QuadForm quad_form(double sx, double sy, double th) {
  const double cs = std::cos(th);
  const double sn = std::sin(th);
  const double s2 = std::sin(2 * th);
  const double ix = 1.0 / (sx * sx);
  const double iy = 1.0 / (sy * sy);
  return {0.5 * (cs * cs * ix + sn * sn * iy), 0.25 * s2 * (iy - ix), 0.5 * (sn * sn * ix + cs * cs * iy)};
}

}  // namespace

bool GaussParams::finite() const {
  for (double v : to_array())
    if (!std::isfinite(v)) return false;
  return true;
}

double GaussParams::operator()(double x, double y) const {
  const auto [a, b, c] = quad_form(sigma_x, sigma_y, theta);
  const double dx = x - x0;
  const double dy = y - y0;
  return A * std::exp(-(a * dx * dx + 2 * b * dx * dy + c * dy * dy)) + d;
}

Grid render_gaussian(const GaussParams& p, int width, int height) {
  Grid g(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) g.at(x, y) = static_cast<float>(p(x, y));
  return g;
}

GaussParams canonicalize(GaussParams p) {
  if (p.sigma_x < p.sigma_y) {
    std::swap(p.sigma_x, p.sigma_y);
    p.theta += kPi / 2;
  }
  // The ellipse is invariant under theta -> theta + pi.
  p.theta = std::remainder(p.theta, kPi);
  if (p.theta <= -kPi / 2) p.theta += kPi;
  return p;
}

GaussBounds GaussBounds::for_map(int width, int height) {
  const double smax = std::max(width, height);
  return {{0.0, 0.0, 0.0, 0.5, 0.5, -kPi / 2, -0.5},
          {2.0, width - 1.0, height - 1.0, smax, smax, kPi / 2, 0.5}};
}

GaussParams init_guess(const Grid& map) {
  if (map.empty()) throw DataError("init_guess: empty map");
  const auto v = map.values();
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (float x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  const Peak pk = peak(map);
  GaussParams p;
  p.A = pk.value - 2.0 * sd;
  p.x0 = pk.position.x;
  p.y0 = pk.position.y;
  p.sigma_x = p.sigma_y = 5.0 * sd;
  p.theta = 0.0;
  p.d = 0.0;
  return p;
}

bool is_degenerate(const GaussParams& init) {
  return !init.finite() || !(init.A > 0.0) || !(init.sigma_x > 0.0) || !(init.sigma_y > 0.0);
}

void gaussian_jacobian(const GaussParams& p, int w, int h, std::span<double> out) {
  const std::size_t m = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (out.size() != 7 * m) throw DataError("gaussian_jacobian: output size mismatch");
  const auto [a, b, c] = quad_form(p.sigma_x, p.sigma_y, p.theta);
  const double cs = std::cos(p.theta), sn = std::sin(p.theta);
  const double s2 = std::sin(2 * p.theta), c2 = std::cos(2 * p.theta);
  const double sx3 = p.sigma_x * p.sigma_x * p.sigma_x;
  const double sy3 = p.sigma_y * p.sigma_y * p.sigma_y;
  const double ix = 1.0 / (p.sigma_x * p.sigma_x);
  const double iy = 1.0 / (p.sigma_y * p.sigma_y);
  // Partial derivatives of (a, b, c) with respect to sigma_x, sigma_y, theta.
  const double da_sx = -cs * cs / sx3, db_sx = 0.5 * s2 / sx3, dc_sx = -sn * sn / sx3;
  const double da_sy = -sn * sn / sy3, db_sy = -0.5 * s2 / sy3, dc_sy = -cs * cs / sy3;
  const double da_th = 0.5 * s2 * (iy - ix), db_th = 0.5 * c2 * (iy - ix), dc_th = -0.5 * s2 * (iy - ix);
  double* col[7];
  for (std::size_t k = 0; k < 7; ++k) col[k] = out.data() + k * m;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - p.x0;
      const double dy = y - p.y0;
      const double e = std::exp(-(a * dx * dx + 2 * b * dx * dy + c * dy * dy));
      const double ae = p.A * e;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      col[0][i] = e;
      col[1][i] = ae * (2 * a * dx + 2 * b * dy);
      col[2][i] = ae * (2 * b * dx + 2 * c * dy);
      col[3][i] = -ae * (da_sx * dx * dx + 2 * db_sx * dx * dy + dc_sx * dy * dy);
      col[4][i] = -ae * (da_sy * dx * dx + 2 * db_sy * dx * dy + dc_sy * dy * dy);
      col[5][i] = -ae * (da_th * dx * dx + 2 * db_th * dx * dy + dc_th * dy * dy);
      col[6][i] = 1.0;
    }
}

GaussFit fit_gaussian(const Grid& map, const GaussParams& init, const GaussBounds& bounds) {
  if (map.empty()) throw DataError("fit_gaussian: empty map");
  if (is_degenerate(init)) throw NumericError("fit_gaussian: degenerate starting point");
  for (float v : map.values())
    if (!std::isfinite(v)) throw NumericError("fit_gaussian: non-finite map value");
  const int w = map.width();
  const int h = map.height();
  const Eigen::Index m = static_cast<Eigen::Index>(map.size());

  const auto lb_a = bounds.lower.to_array();
  const auto ub_a = bounds.upper.to_array();
  const auto x0_a = init.to_array();
  Eigen::VectorXd lb(7), ub(7), x0(7);
  for (int i = 0; i < 7; ++i) {
    lb[i] = lb_a[i];
    ub[i] = ub_a[i];
    x0[i] = std::clamp(x0_a[i], lb_a[i], ub_a[i]);
  }

  Eigen::VectorXd data(m);
  for (Eigen::Index i = 0; i < m; ++i) data[i] = map.values()[static_cast<std::size_t>(i)];

  LsqProblem problem;
  problem.residual = [&](const Eigen::VectorXd& q) {
    const GaussParams p = GaussParams::from_array(std::span<const double, 7>(q.data(), 7));
    const auto [a, b, c] = quad_form(p.sigma_x, p.sigma_y, p.theta);
    Eigen::VectorXd r(m);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x - p.x0;
        const double dy = y - p.y0;
        const Eigen::Index i = static_cast<Eigen::Index>(y) * w + x;
        r[i] = p.A * std::exp(-(a * dx * dx + 2 * b * dx * dy + c * dy * dy)) + p.d - data[i];
      }
    return r;
  };
  problem.jacobian = [&](const Eigen::VectorXd& q) {
    const GaussParams p = GaussParams::from_array(std::span<const double, 7>(q.data(), 7));
    Eigen::MatrixXd J(m, 7);
    gaussian_jacobian(p, w, h, std::span<double>(J.data(), static_cast<std::size_t>(J.size())));
    return J;
  };

  const TrfResult r = solve_trf(problem, x0, lb, ub);
  GaussFit fit;
  fit.params = canonicalize(GaussParams::from_array(std::span<const double, 7>(r.x.data(), 7)));
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  fit.initial_cost = r.initial_cost;
  fit.cost = r.cost;
  return fit;
}

Prediction locate(const Grid& map) {
  if (map.empty()) throw DataError("locate: empty map");
  const Peak pk = peak(map);
  Prediction pred;
  pred.position = pk.position;
  pred.confidence = pk.value;
  const GaussParams init = init_guess(map);
  pred.gauss = init;
  if (is_degenerate(init)) return pred;
  GaussFit fit;
  try {
    fit = fit_gaussian(map, init, GaussBounds::for_map(map.width(), map.height()));
  } catch (const NumericError&) {
    return pred;
  }
  pred.gauss = fit.params;
  // A fitted bump no taller than twice the residual RMS is indistinguishable from noise.
  const double rms = std::sqrt(2.0 * fit.cost / static_cast<double>(map.size()));
  if (!fit.converged || !fit.params.finite() || !(fit.params.A > 2.0 * rms)) return pred;
  pred.position = {std::clamp(std::round(fit.params.x0), 0.0, map.width() - 1.0),
                   std::clamp(std::round(fit.params.y0), 0.0, map.height() - 1.0)};
  pred.fit_converged = true;
  return pred;
}

std::string_view to_string(FilterCase c) {
  switch (c) {
    case FilterCase::none:
      return "none";
    case FilterCase::border:
      return "border";
    case FilterCase::low_confidence_pad:
      return "low_confidence_pad";
    case FilterCase::specialist_inconsistent:
      return "specialist_inconsistent";
  }
  return "none";
}

FilterCase parse_filter_case(std::string_view s) {
  for (FilterCase c : {FilterCase::none, FilterCase::border, FilterCase::low_confidence_pad,
                       FilterCase::specialist_inconsistent})
    if (to_string(c) == s) return c;
  throw DataError("unknown filter case '" + std::string(s) + "'");
}

FilterVerdict filter_prediction(const Prediction& pred, int width, int height) {
  const double x = pred.position.x;
  const double y = pred.position.y;
  if (x <= 0 || x >= width - 1 || y <= 0 || y >= height - 1) return {false, FilterCase::border};
  const bool in_pad = x < kBorderPadding || x > width - 1 - kBorderPadding || y < kBorderPadding ||
                      y > height - 1 - kBorderPadding;
  if (in_pad && pred.confidence < kLowConfidence) return {false, FilterCase::low_confidence_pad};
  return {true, FilterCase::none};
}

FilterVerdict filter_specialist_frame(std::span<const Point> specialists, Point reference, double sigma_bar) {
  if (specialists.size() < 2) throw DataError("specialist filter: fewer than two specialists");
  if (!(sigma_bar > 0.0)) throw DataError("specialist filter: sigma_bar must be positive");
  const double limit = kInconsistencyFactor * sigma_bar;
  int far = 0;
  for (const Point& p : specialists)
    if (std::hypot(p.x - reference.x, p.y - reference.y) > limit) ++far;
  if (far >= kInconsistentSpecialists) return {false, FilterCase::specialist_inconsistent};
  return {true, FilterCase::none};
}

std::string format_predictions(std::span<const PredictionRow> rows) {
  std::string out(kPredictionsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.video_id + ',' + std::to_string(r.frame_idx) + ',' + format_decimal(r.prediction.position.x) + ',' +
           format_decimal(r.prediction.position.y) + ',' + format_decimal(r.prediction.confidence) + ',' +
           (r.prediction.fit_converged ? "true" : "false") + ',' + std::string(to_string(r.filter_case)) + '\n';
  }
  return out;
}

std::vector<PredictionRow> parse_predictions(std::string_view text) {
  std::vector<PredictionRow> rows;
  std::istringstream is{std::string(text)};
  std::string line;
  int row = 0;
  auto num = [&](std::string_view s, const char* what) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw DataError("predictions: row " + std::to_string(row) + ": malformed " + what);
    return v;
  };
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1) {
      if (line != kPredictionsHeader) throw DataError("predictions: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw DataError("predictions: row " + std::to_string(row) + ": expected 7 fields");
    PredictionRow r;
    r.video_id = f[0];
    r.frame_idx = static_cast<int>(num(f[1], "frame_idx"));
    r.prediction.position = {num(f[2], "x_px"), num(f[3], "y_px")};
    r.prediction.confidence = num(f[4], "confidence");
    if (f[5] != "true" && f[5] != "false")
      throw DataError("predictions: row " + std::to_string(row) + ": fit_converged must be true or false");
    r.prediction.fit_converged = f[5] == "true";
    r.filter_case = parse_filter_case(f[6]);
    rows.push_back(std::move(r));
  }
  if (row == 0) throw DataError("predictions: missing header");
  return rows;
}

}  // namespace mtj

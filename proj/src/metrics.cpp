#include "mtj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "mtj/special.hpp"

namespace mtj {

namespace {

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

Point reference_label(std::span<const Point> s) {
  if (s.size() < 2) throw DataError("reference label: fewer than two specialists");
  Point c{0.0, 0.0};
  for (const Point& p : s) {
    c.x += p.x;
    c.y += p.y;
  }
  return {c.x / static_cast<double>(s.size()), c.y / static_cast<double>(s.size())};
}

LooDeviation loo_specialist_deviation(std::span<const Point> s) {
  if (s.size() < 3) throw DataError("leave-one-out deviation: fewer than three specialists");
  const double n = static_cast<double>(s.size());
  Point sum{0.0, 0.0};
  for (const Point& p : s) {
    sum.x += p.x;
    sum.y += p.y;
  }
  LooDeviation out;
  for (const Point& p : s) {
    const Point others{(sum.x - p.x) / (n - 1.0), (sum.y - p.y) / (n - 1.0)};
    out.fold_distances.push_back(dist(p, others));
  }
  for (double d : out.fold_distances) out.mean += d;
  out.mean /= n;
  return out;
}

FrameAgreement frame_agreement(FrameKey key, std::span<const Point> specialists) {
  FrameAgreement f;
  f.key = std::move(key);
  f.reference = reference_label(specialists);
  f.specialists.assign(specialists.begin(), specialists.end());
  for (const Point& p : specialists) f.distances.push_back(dist(p, f.reference));
  f.loo_deviation = specialists.size() >= 3 ? loo_specialist_deviation(specialists).mean : 0.0;
  f.sigma = sample_sd(f.distances);
  return f;
}

SpecialistSummary summarize_specialists(std::span<const FrameAgreement> frames) {
  SpecialistSummary s;
  s.n_frames = frames.size();
  if (frames.empty()) return s;
  for (const auto& f : frames) {
    s.d_bar += f.loo_deviation;
    s.sigma_bar += f.sigma;
  }
  s.d_bar /= static_cast<double>(frames.size());
  s.sigma_bar /= static_cast<double>(frames.size());
  return s;
}

AnovaTable two_way_anova(const Eigen::MatrixXd& r) {
  AnovaTable t;
  t.n = static_cast<int>(r.rows());
  t.k = static_cast<int>(r.cols());
  if (t.n < 2 || t.k < 2) throw DataError("anova: need at least 2 rows and 2 columns");
  if (!r.allFinite()) throw DataError("anova: ratings contain missing or non-finite cells");
  const double grand = r.mean();
  const double ss_rows = t.k * (r.rowwise().mean().array() - grand).square().sum();
  const double ss_cols = t.n * (r.colwise().mean().array() - grand).square().sum();
  const double ss_total = (r.array() - grand).square().sum();
  const double ss_error = std::max(0.0, ss_total - ss_rows - ss_cols);
  t.ms_rows = ss_rows / (t.n - 1);
  t.ms_cols = ss_cols / (t.k - 1);
  t.ms_error = ss_error / ((t.n - 1.0) * (t.k - 1.0));
  return t;
}

IccResult icc_a_k(const Eigen::MatrixXd& ratings, double alpha) {
  if (ratings.rows() < 5) throw DataError("icc: need at least 5 rows");
  IccResult out;
  out.anova = two_way_anova(ratings);
  const double n = out.anova.n;
  const double k = out.anova.k;
  const double msr = out.anova.ms_rows;
  const double msc = out.anova.ms_cols;
  const double mse = out.anova.ms_error;
  // Round-off guard: a table whose columns agree exactly has zero error and column terms.
  const double scale = std::max({msr, msc, mse, 1e-300});
  if (mse <= 1e-14 * scale && msc <= 1e-14 * scale) {
    out.icc = out.ci_low = out.ci_high = 1.0;
    return out;
  }
  out.icc = (msr - mse) / (msr + (msc - mse) / n);

  // Interval for the single-rater ICC(A,1), then the Spearman-Brown step to k raters.
  const double icc1 = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n);
  const double aa = k * icc1 / (n * (1 - icc1));
  const double bb = 1 + k * icc1 * (n - 1) / (n * (1 - icc1));
  const double v = std::pow(aa * msc + bb * mse, 2) /
                   (std::pow(aa * msc, 2) / (k - 1) + std::pow(bb * mse, 2) / ((n - 1) * (k - 1)));
  if (!(v > 0.0) || !std::isfinite(v))
    throw NumericError("icc: confidence interval undefined (no residual variance between raters)");
  const double f1 = f_quantile(1 - alpha / 2, n - 1, v);
  const double f2 = f_quantile(1 - alpha / 2, v, n - 1);
  const double lo1 = n * (msr - f1 * mse) / (f1 * (k * msc + (k * n - k - n) * mse) + n * msr);
  const double hi1 = n * (f2 * msr - mse) / (k * msc + (k * n - k - n) * mse + n * f2 * msr);
  out.ci_low = lo1 * k / (1 + lo1 * (k - 1));
  out.ci_high = hi1 * k / (1 + hi1 * (k - 1));
  return out;
}

ErrorStats error_stats_from_distances(std::span<const double> d) {
  if (d.empty()) throw DataError("error stats: empty set");
  ErrorStats s;
  s.n = d.size();
  double sq = 0.0;
  for (double x : d) {
    sq += x * x;
    s.mae += x;
  }
  s.rmse = std::sqrt(sq / static_cast<double>(d.size()));
  s.mae /= static_cast<double>(d.size());
  s.sem = sample_sd(d) / std::sqrt(static_cast<double>(d.size()));
  return s;
}

ErrorStats error_stats(std::span<const Point> model, std::span<const Point> reference, double spacing_mm) {
  if (model.size() != reference.size()) throw DataError("error stats: model and reference sizes differ");
  if (!(spacing_mm > 0.0)) throw DataError("error stats: spacing must be positive");
  std::vector<double> d(model.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = dist(model[i], reference[i]) * spacing_mm;
  return error_stats_from_distances(d);
}

BlandAltman bland_altman(std::span<const double> model, std::span<const double> reference, double extent) {
  if (model.empty()) throw DataError("bland-altman: empty input");
  if (model.size() != reference.size()) throw DataError("bland-altman: model and reference sizes differ");
  if (!(extent > 0.0)) throw DataError("bland-altman: extent must be positive");
  BlandAltman ba;
  std::vector<double> diff(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    diff[i] = model[i] - reference[i];
    ba.pairs.emplace_back(0.5 * (model[i] + reference[i]) / extent, diff[i]);
    ba.bias += diff[i];
  }
  ba.bias /= static_cast<double>(diff.size());
  ba.sd = sample_sd(diff);
  ba.loa_low = ba.bias - 1.96 * ba.sd;
  ba.loa_high = ba.bias + 1.96 * ba.sd;
  return ba;
}

std::vector<TolerancePoint> tolerance_curve(std::span<const double> model_distances,
                                            const std::vector<std::vector<double>>& specialist_distances,
                                            double sigma_bar, std::span<const double> n_grid) {
  if (!(sigma_bar > 0.0)) throw DataError("tolerance curve: sigma_bar must be positive");
  auto pct = [](std::span<const double> d, double limit) {
    if (d.empty()) return 0.0;
    std::size_t c = 0;
    for (double x : d)
      if (x <= limit) ++c;
    return 100.0 * static_cast<double>(c) / static_cast<double>(d.size());
  };
  std::vector<double> grid(n_grid.begin(), n_grid.end());
  std::sort(grid.begin(), grid.end());
  std::vector<TolerancePoint> out;
  for (double n : grid) {
    TolerancePoint p{n, pct(model_distances, n * sigma_bar), 0.0};
    for (const auto& s : specialist_distances) p.specialist_pct += pct(s, n * sigma_bar);
    if (!specialist_distances.empty()) p.specialist_pct /= static_cast<double>(specialist_distances.size());
    out.push_back(p);
  }
  return out;
}

std::vector<double> default_tolerance_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 40; ++i) g.push_back(0.25 * i);
  return g;
}

std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::muscle:
      return "muscle";
    case Grouping::movement:
      return "movement";
    case Grouping::instrument:
      return "instrument";
  }
  return "?";
}

Grouping parse_grouping(std::string_view s) {
  for (Grouping g : {Grouping::muscle, Grouping::movement, Grouping::instrument})
    if (to_string(g) == s) return g;
  throw UsageError("unknown grouping key '" + std::string(s) + "'");
}

double distance_mm(const EvalFrame& f) { return dist(f.model, f.reference) * f.spacing_mm; }

Breakdown breakdown(std::span<const EvalFrame> frames, Grouping grouping) {
  std::vector<std::string> all;
  switch (grouping) {
    case Grouping::muscle:
      all = {"MG", "LG"};
      break;
    case Grouping::movement:
      all = {"MVC", "PT", "RUN"};
      break;
    case Grouping::instrument:
      all = {"Aixplorer", "Esaote", "Telemed", "SyntheticA", "SyntheticB"};
      break;
  }
  auto label = [&](const EvalFrame& f) {
    switch (grouping) {
      case Grouping::muscle:
        return std::string(to_string(f.muscle));
      case Grouping::movement:
        return std::string(to_string(f.movement));
      case Grouping::instrument:
        return std::string(to_string(f.instrument));
    }
    return std::string();
  };
  std::map<std::string, std::vector<double>> by_group;
  for (const auto& f : frames) by_group[label(f)].push_back(distance_mm(f));
  Breakdown b;
  b.grouping = grouping;
  for (const auto& name : all) {
    const auto it = by_group.find(name);
    if (it == by_group.end())
      b.empty_groups.push_back(name);
    else
      b.groups.push_back({name, error_stats_from_distances(it->second)});
  }
  return b;
}

}  // namespace mtj

// ---------------------------------------------------------------- report JSON

namespace mtj {

namespace {

using ojson = nlohmann::ordered_json;

ojson stats_json(const ErrorStats& s) { return {{"n", s.n}, {"rmse", s.rmse}, {"sem", s.sem}, {"mae", s.mae}}; }

ErrorStats stats_from(const ojson& j) {
  return {j.at("n").get<std::size_t>(), j.at("rmse").get<double>(), j.at("sem").get<double>(),
          j.at("mae").get<double>()};
}

ojson ba_json(const BlandAltman& b) {
  ojson pairs = ojson::array();
  for (const auto& [m, d] : b.pairs) pairs.push_back({m, d});
  return {{"bias", b.bias}, {"sd", b.sd}, {"loa_low", b.loa_low}, {"loa_high", b.loa_high}, {"pairs", pairs}};
}

BlandAltman ba_from(const ojson& j) {
  BlandAltman b;
  b.bias = j.at("bias").get<double>();
  b.sd = j.at("sd").get<double>();
  b.loa_low = j.at("loa_low").get<double>();
  b.loa_high = j.at("loa_high").get<double>();
  for (const auto& p : j.at("pairs")) b.pairs.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return b;
}

}  // namespace

std::string report_to_json(const EvaluationReport& r) {
  ojson j;
  j["n_total"] = r.n_total;
  j["n_frames"] = r.n_frames;
  j["exclusions"] = {{"border", r.exclusions.border},
                     {"low_confidence_pad", r.exclusions.low_confidence_pad},
                     {"specialist_inconsistent", r.exclusions.specialist_inconsistent},
                     {"total", r.exclusions.total()}};
  j["sigma_bar_all_px"] = r.sigma_bar_all_px;
  j["sigma_bar_px"] = r.sigma_bar_px;
  j["d_bar_px"] = r.d_bar_px;
  j["d_bar_mm"] = r.d_bar_mm;
  j["rmse_mm"] = r.model_mm.rmse;
  j["sem_mm"] = r.model_mm.sem;
  j["mae_mm"] = r.model_mm.mae;
  j["specialist_rmse_mm"] = {{"mean", r.specialist_rmse_mm_mean}, {"sd", r.specialist_rmse_mm_sd}};
  if (r.icc)
    j["icc"] = {{"value", r.icc->icc},
                {"ci_low", r.icc->ci_low},
                {"ci_high", r.icc->ci_high},
                {"n", r.icc->anova.n},
                {"k", r.icc->anova.k},
                {"ms_rows", r.icc->anova.ms_rows},
                {"ms_cols", r.icc->anova.ms_cols},
                {"ms_error", r.icc->anova.ms_error}};
  else
    j["icc"] = nullptr;
  j["bland_altman"] = {{"x", ba_json(r.bland_altman_x)}, {"y", ba_json(r.bland_altman_y)}};
  ojson tol = ojson::array();
  for (const auto& t : r.tolerance)
    tol.push_back({{"n_star", t.n_star}, {"model_pct", t.model_pct}, {"specialist_pct", t.specialist_pct}});
  j["tolerance_curve"] = tol;
  ojson bds = ojson::object();
  for (const auto& b : r.breakdowns) {
    ojson groups = ojson::object();
    for (const auto& g : b.groups) groups[g.group] = stats_json(g.stats);
    bds[std::string(to_string(b.grouping))] = {{"groups", groups}, {"empty_groups", b.empty_groups}};
  }
  j["breakdowns"] = bds;
  j["model_distances_mm"] = r.model_distances_mm;
  j["specialist_loo_distances_mm"] = r.specialist_loo_distances_mm;
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  EvaluationReport r;
  try {
    const ojson j = ojson::parse(text);
    r.n_total = j.at("n_total").get<int>();
    r.n_frames = j.at("n_frames").get<int>();
    const auto& ex = j.at("exclusions");
    r.exclusions = {ex.at("border").get<int>(), ex.at("low_confidence_pad").get<int>(),
                    ex.at("specialist_inconsistent").get<int>()};
    r.sigma_bar_all_px = j.at("sigma_bar_all_px").get<double>();
    r.sigma_bar_px = j.at("sigma_bar_px").get<double>();
    r.d_bar_px = j.at("d_bar_px").get<double>();
    r.d_bar_mm = j.at("d_bar_mm").get<double>();
    r.model_mm.rmse = j.at("rmse_mm").get<double>();
    r.model_mm.sem = j.at("sem_mm").get<double>();
    r.model_mm.mae = j.at("mae_mm").get<double>();
    r.model_mm.n = static_cast<std::size_t>(r.n_frames);
    r.specialist_rmse_mm_mean = j.at("specialist_rmse_mm").at("mean").get<double>();
    r.specialist_rmse_mm_sd = j.at("specialist_rmse_mm").at("sd").get<double>();
    if (!j.at("icc").is_null()) {
      const auto& ic = j.at("icc");
      IccResult icc;
      icc.icc = ic.at("value").get<double>();
      icc.ci_low = ic.at("ci_low").get<double>();
      icc.ci_high = ic.at("ci_high").get<double>();
      icc.anova = {ic.at("n").get<int>(), ic.at("k").get<int>(), ic.at("ms_rows").get<double>(),
                   ic.at("ms_cols").get<double>(), ic.at("ms_error").get<double>()};
      r.icc = icc;
      r.icc_raters = icc.anova.k;
    }
    r.bland_altman_x = ba_from(j.at("bland_altman").at("x"));
    r.bland_altman_y = ba_from(j.at("bland_altman").at("y"));
    for (const auto& t : j.at("tolerance_curve"))
      r.tolerance.push_back(
          {t.at("n_star").get<double>(), t.at("model_pct").get<double>(), t.at("specialist_pct").get<double>()});
    for (const auto& [key, b] : j.at("breakdowns").items()) {
      Breakdown bd;
      bd.grouping = parse_grouping(key);
      for (const auto& [g, s] : b.at("groups").items()) bd.groups.push_back({g, stats_from(s)});
      bd.empty_groups = b.at("empty_groups").get<std::vector<std::string>>();
      r.breakdowns.push_back(std::move(bd));
    }
    r.model_distances_mm = j.at("model_distances_mm").get<std::vector<double>>();
    r.specialist_loo_distances_mm = j.at("specialist_loo_distances_mm").get<std::vector<double>>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace mtj

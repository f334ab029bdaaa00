#include <cmath>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "doctest.h"
#include "mtj/metrics.hpp"
#include "mtj/rng.hpp"
#include "mtj/special.hpp"

using namespace mtj;

namespace {

// Two-way ANOVA by explicit sums of squares, and the residual sum of squares
// cross-checked against an ordinary least-squares fit with dummy-coded rows and columns.
struct OracleAnova {
  double msr, msc, mse;
};

OracleAnova oracle_anova(const Eigen::MatrixXd& r) {
  const int n = static_cast<int>(r.rows()), k = static_cast<int>(r.cols());
  double grand = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) grand += r(i, j);
  grand /= n * k;
  double ssr = 0.0, ssc = 0.0, sst = 0.0;
  for (int i = 0; i < n; ++i) {
    double m = 0.0;
    for (int j = 0; j < k; ++j) m += r(i, j);
    ssr += k * std::pow(m / k - grand, 2);
  }
  for (int j = 0; j < k; ++j) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += r(i, j);
    ssc += n * std::pow(m / n - grand, 2);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) sst += std::pow(r(i, j) - grand, 2);

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n * k, 1 + (n - 1) + (k - 1));
  Eigen::VectorXd y(n * k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const int row = i * k + j;
      X(row, 0) = 1.0;
      if (i > 0) X(row, i) = 1.0;
      if (j > 0) X(row, n - 1 + j) = 1.0;
      y[row] = r(i, j);
    }
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  const double sse_ols = (y - X * beta).squaredNorm();
  const double sse = sst - ssr - ssc;
  CHECK(sse_ols == doctest::Approx(sse).epsilon(1e-9));
  return {ssr / (n - 1), ssc / (k - 1), sse_ols / ((n - 1) * (k - 1))};
}

Eigen::MatrixXd random_table(Rng& rng, int n, int k) {
  Eigen::MatrixXd r(n, k);
  std::vector<double> col_bias(k);
  for (double& b : col_bias) b = rng.normal();
  for (int i = 0; i < n; ++i) {
    const double subject = 3.0 * rng.normal();
    for (int j = 0; j < k; ++j) r(i, j) = 10.0 + subject + col_bias[j] + rng.normal();
  }
  return r;
}

}  // namespace

TEST_CASE("reference labels") {
  const std::vector<Point> sq{{0, 0}, {2, 0}, {0, 2}, {2, 2}};
  CHECK(reference_label(sq) == Point{1, 1});
  CHECK(reference_label(std::vector<Point>(4, Point{50, 50})) == Point{50, 50});
  CHECK(reference_label(std::vector<Point>{{10, 0}, {20, 0}, {30, 0}, {40, 0}}) == Point{25, 0});
  CHECK_THROWS_AS(reference_label(std::vector<Point>{{1, 1}}), DataError);

  std::vector<Point> perm{{3.5, 1.25}, {7.0, 9.0}, {1.0, 4.0}, {2.0, 2.0}};
  const Point a = reference_label(perm);
  std::reverse(perm.begin(), perm.end());
  const Point b = reference_label(perm);
  CHECK(a.x == doctest::Approx(b.x).epsilon(1e-15));
  CHECK(a.y == doctest::Approx(b.y).epsilon(1e-15));
}

TEST_CASE("leave-one-out specialist deviation") {
  CHECK(loo_specialist_deviation(std::vector<Point>(4, Point{7, 8})).mean == 0.0);

  const LooDeviation sq = loo_specialist_deviation(std::vector<Point>{{0, 0}, {2, 0}, {0, 2}, {2, 2}});
  for (double d : sq.fold_distances) CHECK(d == doctest::Approx(4.0 / 3.0 * std::sqrt(2.0)).epsilon(1e-14));
  CHECK(sq.mean == doctest::Approx(1.88562).epsilon(1e-5));

  const double delta = 6.0;
  const LooDeviation one = loo_specialist_deviation(std::vector<Point>{{delta, 0}, {0, 0}, {0, 0}, {0, 0}});
  CHECK(one.fold_distances[0] == doctest::Approx(delta));
  for (int i = 1; i < 4; ++i) CHECK(one.fold_distances[i] == doctest::Approx(delta / 3));
  CHECK(one.mean == doctest::Approx(delta / 2));

  CHECK_THROWS_AS(loo_specialist_deviation(std::vector<Point>{{0, 0}, {1, 1}}), DataError);

  SUBCASE("matches direct enumeration and scales linearly") {
    Rng rng(12);
    for (int t = 0; t < 1000; ++t) {
      std::vector<Point> s(4);
      for (auto& p : s) p = {rng.uniform(0, 256), rng.uniform(0, 128)};
      const LooDeviation got = loo_specialist_deviation(s);
      double mean = 0.0;
      for (int k = 0; k < 4; ++k) {
        double mx = 0.0, my = 0.0;
        for (int j = 0; j < 4; ++j)
          if (j != k) {
            mx += s[j].x / 3.0;
            my += s[j].y / 3.0;
          }
        const double d = std::hypot(s[k].x - mx, s[k].y - my);
        CHECK(std::abs(got.fold_distances[k] - d) < 1e-12);
        mean += d / 4.0;
      }
      CHECK(std::abs(got.mean - mean) < 1e-12);
      std::vector<Point> scaled = s;
      for (auto& p : scaled) p = {-2.5 * p.x, -2.5 * p.y};
      CHECK(loo_specialist_deviation(scaled).mean == doctest::Approx(2.5 * got.mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("frame agreement and specialist summary") {
  const FrameAgreement f = frame_agreement({"v", 0}, std::vector<Point>{{0, 0}, {2, 0}, {0, 2}, {2, 2}});
  CHECK(f.reference == Point{1, 1});
  for (double d : f.distances) CHECK(d == doctest::Approx(std::sqrt(2.0)));
  CHECK(f.sigma == doctest::Approx(0.0).epsilon(1e-12));

  const FrameAgreement g = frame_agreement({"v", 5}, std::vector<Point>{{4, 0}, {0, 0}, {0, 0}, {0, 0}});
  // distances to (1, 0): 3, 1, 1, 1 -> sample SD 1
  CHECK(g.sigma == doctest::Approx(1.0));
  const std::vector<FrameAgreement> frames{f, g};
  const SpecialistSummary s = summarize_specialists(frames);
  CHECK(s.n_frames == 2);
  CHECK(s.sigma_bar == doctest::Approx(0.5));
  CHECK(s.d_bar == doctest::Approx(0.5 * (f.loo_deviation + g.loo_deviation)));
}

TEST_CASE("ICC(A,k)") {
  SUBCASE("classic 6 x 4 table") {
    Eigen::MatrixXd r(6, 4);
    r << 9, 2, 5, 8, 6, 1, 3, 2, 8, 4, 6, 8, 7, 1, 2, 6, 10, 5, 6, 9, 6, 2, 4, 7;
    const IccResult icc = icc_a_k(r);
    CHECK(icc.icc == doctest::Approx(0.62).epsilon(0.01));  // published value, two decimals
    CHECK(icc.ci_low < icc.icc);
    CHECK(icc.ci_high > icc.icc);
  }
  SUBCASE("identical columns") {
    Eigen::MatrixXd r(8, 4);
    for (int i = 0; i < 8; ++i) r.row(i).setConstant(i * 1.5 + 2);
    const IccResult icc = icc_a_k(r);
    CHECK(icc.icc == 1.0);
    CHECK(icc.ci_low == 1.0);
    CHECK(icc.ci_high == 1.0);
  }
  SUBCASE("all equal") {
    const IccResult icc = icc_a_k(Eigen::MatrixXd::Constant(6, 3, 4.0));
    CHECK(icc.icc == 1.0);
  }
  SUBCASE("rater offsets without residual variance") {
    Eigen::MatrixXd r(6, 3);
    for (int i = 0; i < 6; ++i) r.row(i) << 1.0, 2.0, 4.0;
    CHECK_THROWS_AS(icc_a_k(r), NumericError);
  }
  SUBCASE("too few rows") { CHECK_THROWS_AS(icc_a_k(Eigen::MatrixXd::Random(4, 4)), DataError); }

  SUBCASE("matches the independent ANOVA on random 20 x 4 tables") {
    Rng rng(77);
    for (int t = 0; t < 100; ++t) {
      const Eigen::MatrixXd r = random_table(rng, 20, 4);
      const OracleAnova o = oracle_anova(r);
      const IccResult icc = icc_a_k(r);
      const double expected = (o.msr - o.mse) / (o.msr + (o.msc - o.mse) / 20.0);
      CHECK(std::abs(icc.icc - expected) < 1e-9);
      CHECK(icc.anova.ms_rows == doctest::Approx(o.msr).epsilon(1e-10));
      CHECK(icc.anova.ms_cols == doctest::Approx(o.msc).epsilon(1e-10));
      CHECK(icc.anova.ms_error == doctest::Approx(o.mse).epsilon(1e-9));

      // Confidence interval with Boost's F quantiles.
      const double n = 20, k = 4, a = 0.05;
      const double i1 = (o.msr - o.mse) / (o.msr + (k - 1) * o.mse + k * (o.msc - o.mse) / n);
      const double aa = k * i1 / (n * (1 - i1)), bb = 1 + k * i1 * (n - 1) / (n * (1 - i1));
      const double v = std::pow(aa * o.msc + bb * o.mse, 2) /
                       (std::pow(aa * o.msc, 2) / (k - 1) + std::pow(bb * o.mse, 2) / ((n - 1) * (k - 1)));
      const double f1 = boost::math::quantile(boost::math::fisher_f(n - 1, v), 1 - a / 2);
      const double f2 = boost::math::quantile(boost::math::fisher_f(v, n - 1), 1 - a / 2);
      const double lo = n * (o.msr - f1 * o.mse) / (f1 * (k * o.msc + (k * n - k - n) * o.mse) + n * o.msr);
      const double hi = n * (f2 * o.msr - o.mse) / (k * o.msc + (k * n - k - n) * o.mse + n * f2 * o.msr);
      CHECK(icc.ci_low == doctest::Approx(lo * k / (1 + lo * (k - 1))).epsilon(1e-8));
      CHECK(icc.ci_high == doctest::Approx(hi * k / (1 + hi * (k - 1))).epsilon(1e-8));
      CHECK(icc.ci_low <= icc.icc);
      CHECK(icc.icc <= icc.ci_high);
    }
  }
  SUBCASE("invariant to shifts and positive scaling") {
    Rng rng(3);
    const Eigen::MatrixXd r = random_table(rng, 15, 4);
    const double base = icc_a_k(r).icc;
    CHECK(icc_a_k((r.array() + 37.5).matrix()).icc == doctest::Approx(base).epsilon(1e-10));
    CHECK(icc_a_k(r * 0.01).icc == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("special functions against Boost") {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const double a = rng.uniform(0.2, 60.0), b = rng.uniform(0.2, 200.0), x = rng.uniform();
    CHECK(incomplete_beta(a, b, x) == doctest::Approx(boost::math::ibeta(a, b, x)).epsilon(1e-10));
    const double p = rng.uniform(0.001, 0.999);
    const double q = incomplete_beta_inverse(a, b, p);
    CHECK(std::abs(boost::math::ibeta(a, b, q) - p) < 1e-10);
  }
  for (double d1 : {1.0, 3.0, 19.0, 7.3})
    for (double d2 : {2.0, 10.0, 57.0, 123.4})
      for (double p : {0.025, 0.5, 0.95, 0.975}) {
        const double expected = boost::math::quantile(boost::math::fisher_f(d1, d2), p);
        CHECK(f_quantile(p, d1, d2) == doctest::Approx(expected).epsilon(1e-9));
        CHECK(f_cdf(expected, d1, d2) == doctest::Approx(p).epsilon(1e-10));
      }
  CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
}

TEST_CASE("error statistics") {
  const std::vector<Point> ref{{0, 0}, {10, 10}};
  const ErrorStats zero = error_stats(ref, ref, 0.15);
  CHECK(zero.rmse == 0.0);
  CHECK(zero.sem == 0.0);
  CHECK(zero.mae == 0.0);

  const std::vector<Point> model{{3, 0}, {10, 14}};
  const ErrorStats s = error_stats(model, ref, 1.0);
  CHECK(s.rmse == doctest::Approx(std::sqrt(12.5)));
  CHECK(s.rmse == doctest::Approx(3.53553).epsilon(1e-6));
  CHECK(s.mae == doctest::Approx(3.5));
  CHECK(s.sem == doctest::Approx(std::sqrt(0.5) / std::sqrt(2.0)));
  CHECK(error_stats(model, ref, 0.15).rmse == doctest::Approx(0.15 * std::sqrt(12.5)));

  CHECK(error_stats_from_distances(std::vector<double>{2.0}).sem == 0.0);
  CHECK_THROWS_AS(error_stats_from_distances(std::vector<double>{}), DataError);
  CHECK_THROWS(error_stats(model, std::vector<Point>{{0, 0}}, 1.0));

  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> d(1 + rng.below(30));
    for (double& x : d) x = rng.exponential() * 5;
    const ErrorStats e = error_stats_from_distances(d);
    CHECK(e.rmse >= e.mae - 1e-15);
  }
}

TEST_CASE("Bland-Altman") {
  const std::vector<double> same{1, 5, 9};
  const BlandAltman z = bland_altman(same, same, 256);
  CHECK(z.bias == 0.0);
  CHECK(z.loa_low == 0.0);
  CHECK(z.loa_high == 0.0);

  const std::vector<double> m{11, 19}, r{10, 20};
  const BlandAltman ba = bland_altman(m, r, 100);
  CHECK(ba.bias == doctest::Approx(0.0));
  CHECK(ba.sd == doctest::Approx(std::sqrt(2.0)));
  CHECK(ba.loa_low == doctest::Approx(-1.96 * std::sqrt(2.0)));
  CHECK(ba.loa_high == doctest::Approx(1.96 * std::sqrt(2.0)));
  REQUIRE(ba.pairs.size() == 2);
  CHECK(ba.pairs[0].first == doctest::Approx(0.105));
  CHECK(ba.pairs[0].second == doctest::Approx(1.0));
  CHECK_THROWS_AS(bland_altman(std::vector<double>{}, std::vector<double>{}, 10), DataError);
}

TEST_CASE("tolerance curve") {
  const std::vector<double> grid{0.5, 1.0, 2.0, 3.0};
  const std::vector<double> model{1, 2, 3};
  const std::vector<std::vector<double>> spec{{0, 0, 0}, {1, 5, 5}};
  const auto c = tolerance_curve(model, spec, 1.0, grid);
  REQUIRE(c.size() == 4);
  CHECK(c[2].n_star == 2.0);
  CHECK(c[2].model_pct == doctest::Approx(200.0 / 3.0));
  CHECK(c[2].model_pct == doctest::Approx(66.67).epsilon(1e-4));
  CHECK(c[0].specialist_pct == doctest::Approx(50.0));  // specialist curves averaged: 100% and 0%
  CHECK(c[1].specialist_pct == doctest::Approx(100.0 * (1.0 + 1.0 / 3.0) / 2.0));

  const std::vector<double> zeros(5, 0.0);
  for (const auto& p : tolerance_curve(zeros, {zeros}, 0.7, default_tolerance_grid()))
    if (p.n_star > 0) CHECK(p.model_pct == 100.0);

  Rng rng(4);
  std::vector<double> d(50);
  for (double& x : d) x = rng.exponential();
  const auto curve = tolerance_curve(d, {d}, 0.5, default_tolerance_grid());
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(curve[i].model_pct >= curve[i - 1].model_pct);
    CHECK(curve[i].specialist_pct >= curve[i - 1].specialist_pct);
  }
  CHECK(default_tolerance_grid().front() == 0.0);
  CHECK(default_tolerance_grid().back() == 10.0);
  CHECK_THROWS(tolerance_curve(model, spec, 0.0, grid));
}

TEST_CASE("breakdowns") {
  std::vector<EvalFrame> frames;
  for (int i = 0; i < 6; ++i) {
    EvalFrame f;
    f.key = {"v" + std::to_string(i % 3), i};
    f.model = {static_cast<double>(i), 0};
    f.reference = {0, 0};
    f.spacing_mm = 0.5;
    f.instrument = Instrument::SyntheticA;
    f.muscle = i < 4 ? Muscle::MG : Muscle::LG;
    frames.push_back(f);
  }
  const Breakdown single = breakdown(frames, Grouping::instrument);
  REQUIRE(single.groups.size() == 1);
  std::vector<double> dist;
  for (const auto& f : frames) dist.push_back(distance_mm(f));
  const ErrorStats global = error_stats_from_distances(dist);
  CHECK(single.groups[0].group == "SyntheticA");
  CHECK(single.groups[0].stats.rmse == doctest::Approx(global.rmse));
  CHECK(single.groups[0].stats.n == 6);
  CHECK(std::find(single.empty_groups.begin(), single.empty_groups.end(), "Telemed") != single.empty_groups.end());

  const Breakdown muscles = breakdown(frames, Grouping::muscle);
  REQUIRE(muscles.groups.size() == 2);
  CHECK(muscles.groups[0].group == "MG");
  CHECK(muscles.groups[0].stats.mae == doctest::Approx(0.5 * 1.5));
  CHECK(muscles.groups[1].stats.mae == doctest::Approx(0.5 * 4.5));

  CHECK(parse_grouping("movement") == Grouping::movement);
  CHECK_THROWS_AS(parse_grouping("colour"), UsageError);
}

TEST_CASE("report JSON round-trip") {
  EvaluationReport r;
  r.n_total = 10;
  r.n_frames = 8;
  r.exclusions = {1, 1, 0};
  r.sigma_bar_px = 1.25;
  r.model_mm = {8, 0.5, 0.1, 0.4};
  r.icc = IccResult{0.9, 0.8, 0.95, {8, 4, 1, 2, 3}};
  r.icc_raters = 4;
  r.bland_altman_x = {0.1, 0.2, -0.3, 0.5, {{0.5, 0.1}}};
  r.tolerance = {{1.0, 50.0, 60.0}};
  r.breakdowns.push_back({Grouping::muscle, {{"MG", {8, 0.5, 0.1, 0.4}}}, {"LG"}});
  r.model_distances_mm = {0.1, 0.2};
  r.notes = {"synthetic"};
  const std::string text = report_to_json(r);
  const EvaluationReport back = report_from_json(text);
  CHECK(report_to_json(back) == text);
  REQUIRE(back.icc.has_value());
  CHECK(back.icc->icc == 0.9);
  CHECK(back.exclusions.total() == 2);
  CHECK_THROWS_AS(report_from_json("{"), DataError);
}

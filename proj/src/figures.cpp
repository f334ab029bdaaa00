#include "mtj/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mtj/dataio.hpp"

namespace mtj {

namespace {

constexpr double kW = 640;
constexpr double kH = 420;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 55;

struct Axes {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
    return;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

std::string frame(const Axes& a, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
    << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = a.x0 + (a.x1 - a.x0) * i / 4.0;
    const double yv = a.y0 + (a.y1 - a.y0) * i / 4.0;
    s << "<text x=\"" << a.px(xv) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << num(xv)
      << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << a.py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv)
      << "</text>\n";
  }
  s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 14 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  s << "<text transform=\"translate(16," << kH / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
    << "</text>\n";
  return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("figures: cannot write '" + path.string() + "'");
  os << text;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return stem.parent_path() / (stem.filename().string() + ext);
}

std::string hline(const Axes& a, double y, const char* dash, const char* color) {
  std::ostringstream s;
  s << "<line x1=\"" << a.px(a.x0) << "\" x2=\"" << a.px(a.x1) << "\" y1=\"" << a.py(y) << "\" y2=\"" << a.py(y)
    << "\" stroke=\"" << color << "\" stroke-dasharray=\"" << dash << "\"/>\n";
  return s.str();
}

}  // namespace

void write_bland_altman_figure(const std::filesystem::path& stem, const BlandAltman& ba, const std::string& axis) {
  std::ostringstream csv;
  csv << "normalized_mean,difference_mm\n";
  for (const auto& [m, d] : ba.pairs) csv << format_decimal(m) << ',' << format_decimal(d) << '\n';
  write_file(with_ext(stem, ".csv"), csv.str());

  double x0 = 0.0, x1 = 1.0;
  double y0 = std::min(ba.loa_low, 0.0), y1 = std::max(ba.loa_high, 0.0);
  for (const auto& [m, d] : ba.pairs) {
    x0 = std::min(x0, m);
    x1 = std::max(x1, m);
    y0 = std::min(y0, d);
    y1 = std::max(y1, d);
  }
  pad_range(y0, y1);
  const Axes a{x0, x1, y0, y1};
  std::ostringstream s;
  s << frame(a, "Bland-Altman (" + axis + ")", "mean of model and reference / image extent",
             "model - reference (mm)");
  for (const auto& [m, d] : ba.pairs)
    s << "<circle cx=\"" << a.px(m) << "\" cy=\"" << a.py(d) << "\" r=\"2.5\" fill=\"#c0392b\" fill-opacity=\"0.6\"/>\n";
  s << hline(a, ba.bias, "6,4", "black") << hline(a, ba.loa_low, "2,3", "black")
    << hline(a, ba.loa_high, "2,3", "black");
  s << "</svg>\n";
  write_file(with_ext(stem, ".svg"), s.str());
}

void write_tolerance_figure(const std::filesystem::path& stem, const std::vector<TolerancePoint>& curve) {
  std::ostringstream csv;
  csv << "n_star,model_pct,specialist_pct\n";
  for (const auto& p : curve)
    csv << format_decimal(p.n_star) << ',' << format_decimal(p.model_pct) << ',' << format_decimal(p.specialist_pct)
        << '\n';
  write_file(with_ext(stem, ".csv"), csv.str());

  const double xmax = curve.empty() ? 1.0 : std::max(1.0, curve.back().n_star);
  const Axes a{0.0, xmax, 0.0, 100.0};
  std::ostringstream s;
  s << frame(a, "Valid frames vs tolerance distance", "tolerance n* (multiples of sigma_bar)", "frames (%)");
  auto poly = [&](auto get, const char* color) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve) s << a.px(p.n_star) << ',' << a.py(get(p)) << ' ';
    s << "\"/>\n";
  };
  poly([](const TolerancePoint& p) { return p.model_pct; }, "#c0392b");
  poly([](const TolerancePoint& p) { return p.specialist_pct; }, "#2c6fbb");
  s << "<text x=\"" << kW - 140 << "\" y=\"" << kH - kBottom - 30 << "\" fill=\"#c0392b\">model</text>\n";
  s << "<text x=\"" << kW - 140 << "\" y=\"" << kH - kBottom - 14 << "\" fill=\"#2c6fbb\">specialists</text>\n";
  s << "</svg>\n";
  write_file(with_ext(stem, ".svg"), s.str());
}

void write_violin_figure(const std::filesystem::path& stem,
                         const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  std::ostringstream csv;
  csv << "series,distance_mm\n";
  double ymax = 1.0;
  for (const auto& [name, v] : series)
    for (double d : v) {
      csv << name << ',' << format_decimal(d) << '\n';
      ymax = std::max(ymax, d);
    }
  write_file(with_ext(stem, ".csv"), csv.str());

  const double nser = static_cast<double>(std::max<std::size_t>(1, series.size()));
  const Axes a{0.0, nser, 0.0, ymax * 1.05};
  std::ostringstream s;
  s << frame(a, "Distance distributions", "", "distance (mm)");
  constexpr int kBins = 60;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& v = series[i].second;
    const double centre = i + 0.5;
    s << "<text x=\"" << a.px(centre) << "\" y=\"" << kH - kBottom + 32 << "\" text-anchor=\"middle\">"
      << series[i].first << "</text>\n";
    if (v.size() < 2) continue;
    // Gaussian kernel density with Silverman's bandwidth.
    double mean = 0.0;
    for (double d : v) mean += d;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double d : v) var += (d - mean) * (d - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size() - 1));
    const double bw = std::max(1e-3 * ymax, 1.06 * sd * std::pow(static_cast<double>(v.size()), -0.2));
    std::vector<double> dens(kBins + 1);
    double peak = 0.0;
    for (int b = 0; b <= kBins; ++b) {
      const double y = a.y1 * b / kBins;
      double acc = 0.0;
      for (double d : v) acc += std::exp(-0.5 * std::pow((y - d) / bw, 2));
      dens[static_cast<std::size_t>(b)] = acc;
      peak = std::max(peak, acc);
    }
    s << "<polygon fill=\"#c0392b\" fill-opacity=\"0.35\" stroke=\"#c0392b\" points=\"";
    for (int b = 0; b <= kBins; ++b)
      s << a.px(centre + 0.4 * dens[static_cast<std::size_t>(b)] / peak) << ',' << a.py(a.y1 * b / kBins) << ' ';
    for (int b = kBins; b >= 0; --b)
      s << a.px(centre - 0.4 * dens[static_cast<std::size_t>(b)] / peak) << ',' << a.py(a.y1 * b / kBins) << ' ';
    s << "\"/>\n";
    s << "<line x1=\"" << a.px(centre - 0.3) << "\" x2=\"" << a.px(centre + 0.3) << "\" y1=\"" << a.py(mean)
      << "\" y2=\"" << a.py(mean) << "\" stroke=\"black\"/>\n";
  }
  s << "</svg>\n";
  write_file(with_ext(stem, ".svg"), s.str());
}

void write_report_figures(const std::filesystem::path& dir, const EvaluationReport& r) {
  std::filesystem::create_directories(dir);
  write_bland_altman_figure(dir / "bland_altman_x", r.bland_altman_x, "x");
  write_bland_altman_figure(dir / "bland_altman_y", r.bland_altman_y, "y");
  write_tolerance_figure(dir / "tolerance_curve", r.tolerance);
  write_violin_figure(dir / "distance_violin",
                      {{"model", r.model_distances_mm}, {"specialists (leave-one-out)", r.specialist_loo_distances_mm}});
}

}  // namespace mtj

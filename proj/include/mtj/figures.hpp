#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtj/metrics.hpp"

namespace mtj {

/// Standalone SVG figures plus the CSV behind each one.
void write_bland_altman_figure(const std::filesystem::path& stem, const BlandAltman& ba, const std::string& axis);
void write_tolerance_figure(const std::filesystem::path& stem, const std::vector<TolerancePoint>& curve);
/// Violin-style distributions (mirrored kernel density) of named distance sets.
void write_violin_figure(const std::filesystem::path& stem,
                         const std::vector<std::pair<std::string, std::vector<double>>>& series);

/// Writes every figure of a report into `dir`.
void write_report_figures(const std::filesystem::path& dir, const EvaluationReport& report);

}  // namespace mtj

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtj/dataio.hpp"
#include "mtj/localizer.hpp"
#include "mtj/metrics.hpp"
#include "mtj/network.hpp"
#include "mtj/trainer.hpp"

namespace mtj {

/// Annotator id of the generator's exact junction position in synthetic labels.
inline constexpr std::string_view kGroundTruthAnnotator = "GT";

struct SynthOptions {
  std::filesystem::path out_dir;
  std::vector<Instrument> domains{Instrument::SyntheticA};
  int n_per_domain = 10;
  int frames_per_video = 5;
  int width = 128;
  int height = 64;
  int specialists = 0;           ///< simulated annotators S1..Sk around the truth
  double specialist_noise_px = 1.0;
  std::uint64_t seed = 0;
};

struct SynthSummary {
  int frames = 0;
  int videos = 0;
};

/// Writes frames/<video>/frame_%06d.png, labels.csv and manifest.json.
SynthSummary cmd_synth(const SynthOptions& options);

struct TrainOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  /// Domains added per stage; stage k trains on the union of the first k entries.
  std::vector<std::vector<Instrument>> stage_additions;
  NetworkConfig network{.depth = 3, .base_filters = 16, .input_w = 128, .input_h = 64};
  TrainConfig train;
  std::string annotator{kGroundTruthAnnotator};
};

struct TrainSummary {
  std::vector<ModelWeights> models;
  std::vector<EpochLog> log;
  std::vector<std::filesystem::path> checkpoints;
};

TrainSummary cmd_train(const TrainOptions& options);

/// A preprocessed frame ready for the network, with its label if one exists.
struct LoadedFrame {
  FrameKey key;
  const VideoEntry* entry = nullptr;
  Frame input;  ///< cropped, resized, normalized
};

/// Reads and preprocesses every sampled frame listed by the manifest, in manifest order.
std::vector<LoadedFrame> load_frames(const DatasetManifest& manifest);

struct PredictOptions {
  std::filesystem::path weights;
  std::filesystem::path manifest;
  std::filesystem::path out_csv;
  std::filesystem::path maps_dir;  ///< optional .pmap dump
  int threads = 1;
};

struct PredictSummary {
  std::vector<PredictionRow> rows;
  double sec_per_frame = 0.0;
};

PredictSummary cmd_predict(const PredictOptions& options);
/// In-memory variant used by the harness.
std::vector<PredictionRow> predict_frames(const ModelWeights& weights, const std::vector<LoadedFrame>& frames,
                                          int threads = 1);

struct EvaluateOptions {
  std::filesystem::path predictions;
  std::filesystem::path labels;  ///< defaults to the manifest's label file
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  /// Annotators treated as specialists; empty means every annotator except "GT".
  std::vector<std::string> specialists;
};

struct ExcludedFrame {
  FrameKey key;
  FilterCase filter_case = FilterCase::none;
};

struct EvaluateSummary {
  EvaluationReport report;
  std::vector<ExcludedFrame> excluded;
};

EvaluateSummary cmd_evaluate(const EvaluateOptions& options);
/// In-memory core of `evaluate`; prediction order does not matter.
EvaluateSummary evaluate(std::vector<PredictionRow> predictions, const std::vector<LabelRecord>& labels,
                         const DatasetManifest& manifest, const std::vector<std::string>& specialists = {});

/// Re-renders figures and a text summary from a saved report.json.
void cmd_report(const std::filesystem::path& report_json, const std::filesystem::path& out_dir);
std::string report_summary(const EvaluationReport& report);

/// Writes `run.json` echoing a resolved configuration.
void write_run_json(const std::filesystem::path& out_dir, const std::string& json_text);

/// Error of a model against the generator truth: per-frame distances of the
/// located point to the "GT" label, keyed by instrument.
struct DomainError {
  Instrument domain;
  double rmse_px = 0.0;
  std::size_t n = 0;
};
std::vector<DomainError> domain_errors(const std::vector<PredictionRow>& rows, const std::vector<LabelRecord>& labels,
                                       const DatasetManifest& manifest);

}  // namespace mtj

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mtj/dataio.hpp"
#include "mtj/network.hpp"

namespace mtj {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double zero_class_weight = 0.1;
  int epochs_per_stage = 100;
  int batch_size = 8;
  std::uint64_t rng_seed = 0;
  double adam_epsilon = 1e-8;
  bool augment = true;
  int threads = 1;  ///< per-sample gradients run in parallel; the reduction order stays fixed

  void validate() const;
};

/// Mean weighted binary cross-entropy over all pixels.
double weighted_bce(const Grid& pred, const Grid& target, double zero_class_weight);

struct AdamState {
  Gradients m;
  Gradients v;
  std::int64_t step = 0;

  static AdamState for_weights(const ModelWeights& weights);
};

/// One bias-corrected Adam update in place. Throws NumericError naming the
/// layer if any gradient is non-finite (weights and state are left untouched).
void adam_step(ModelWeights& weights, const Gradients& grads, AdamState& state, const TrainConfig& config);

/// Scalar form of the same update, for hand checks.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;
  std::int64_t step = 0;
};
double adam_scalar_step(double w, double g, ScalarAdam& state, const TrainConfig& config);

struct TrainingSample {
  Frame frame;           ///< normalized network input
  ProbabilityMap target;
  Instrument domain = Instrument::SyntheticA;
};

struct CurriculumStage {
  int stage_id = 1;
  std::vector<Instrument> domains;
  std::vector<TrainingSample> dataset;
};

struct EpochLog {
  int stage = 0;
  int epoch = 0;
  double mean_loss = 0.0;
};

/// Runs `epochs_per_stage` passes over the stage data. Shuffling is keyed by
/// (seed, stage, epoch); augmentation is re-drawn per (seed, stage, epoch, sample).
ModelWeights train_stage(ModelWeights weights, const CurriculumStage& stage, const TrainConfig& config,
                         std::vector<EpochLog>& log, AdamState* state = nullptr);

/// Throws UsageError unless every stage's domain set contains the previous one.
void check_curriculum(const std::vector<CurriculumStage>& stages);

/// Trains the stages in order, each starting from the previous stage's weights,
/// and writes `stage_<k>.mtjw` after each stage (plus the log to `training_log.csv`).
std::vector<ModelWeights> train_curriculum(const ModelWeights& initial, const std::vector<CurriculumStage>& stages,
                                           const TrainConfig& config, const std::filesystem::path& checkpoint_dir,
                                           std::vector<EpochLog>* log_out = nullptr);

std::string format_training_log(const std::vector<EpochLog>& log);

}  // namespace mtj

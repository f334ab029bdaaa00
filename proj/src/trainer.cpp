#include "mtj/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mtj/imaging.hpp"
#include "mtj/loss.hpp"
#include "mtj/rng.hpp"

namespace mtj {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("train: learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw UsageError("train: betas must lie in (0, 1)");
  if (!(zero_class_weight > 0.0 && zero_class_weight <= 1.0))
    throw UsageError("train: zero-class weight must lie in (0, 1]");
  if (epochs_per_stage < 0) throw UsageError("train: epochs must be >= 0");
  if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
  if (!(adam_epsilon > 0.0)) throw UsageError("train: adam epsilon must be positive");
  if (threads < 1) throw UsageError("train: threads must be >= 1");
}

double weighted_bce(const Grid& pred, const Grid& target, double zero_class_weight) {
  if (!pred.same_shape(target)) throw DataError("weighted_bce: dimension mismatch");
  if (pred.empty()) throw DataError("weighted_bce: empty map");
  const auto p = pred.values();
  const auto y = target.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += weighted_bce_pixel(p[i], y[i], zero_class_weight);
  return sum / static_cast<double>(p.size());
}

AdamState AdamState::for_weights(const ModelWeights& weights) {
  return {weights.zeros_like(), weights.zeros_like(), 0};
}

void adam_step(ModelWeights& weights, const Gradients& grads, AdamState& state, const TrainConfig& config) {
  if (grads.tensors.size() != weights.tensors.size() || state.m.tensors.size() != weights.tensors.size())
    throw DataError("adam: structure mismatch");
  for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
    const auto& g = grads.tensors[t];
    if (g.values.size() != weights.tensors[t].values.size()) throw DataError("adam: shape mismatch at " + g.spec.path);
    for (float x : g.values)
      if (!std::isfinite(x)) throw NumericError("adam: non-finite gradient in layer " + g.spec.path);
  }
  const std::int64_t step = state.step + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
    auto& w = weights.tensors[t].values;
    auto& m = state.m.tensors[t].values;
    auto& v = state.v.tensors[t].values;
    const auto& g = grads.tensors[t].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(w[i] - config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.adam_epsilon));
    }
  }
  state.step = step;
}

double adam_scalar_step(double w, double g, ScalarAdam& s, const TrainConfig& config) {
  if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
  ++s.step;
  s.m = config.beta1 * s.m + (1.0 - config.beta1) * g;
  s.v = config.beta2 * s.v + (1.0 - config.beta2) * g * g;
  const double mhat = s.m / (1.0 - std::pow(config.beta1, static_cast<double>(s.step)));
  const double vhat = s.v / (1.0 - std::pow(config.beta2, static_cast<double>(s.step)));
  return w - config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_epsilon);
}

namespace {

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int stage, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(derive_seed(seed, hash_name("shuffle"), static_cast<std::uint64_t>(stage),
                             static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void add_into(Gradients& acc, const Gradients& g) {
  for (std::size_t t = 0; t < acc.tensors.size(); ++t) {
    auto& a = acc.tensors[t].values;
    const auto& b = g.tensors[t].values;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
}

void clear(Gradients& g) {
  for (auto& t : g.tensors) std::fill(t.values.begin(), t.values.end(), 0.0f);
}

}  // namespace

ModelWeights train_stage(ModelWeights weights, const CurriculumStage& stage, const TrainConfig& config,
                         std::vector<EpochLog>& log, AdamState* state_io) {
  config.validate();
  if (config.epochs_per_stage == 0) return weights;
  if (stage.dataset.empty()) throw DataError("train: stage " + std::to_string(stage.stage_id) + " has no samples");
  AdamState local = AdamState::for_weights(weights);
  AdamState& state = state_io ? *state_io : local;
  if (state.m.tensors.empty()) state = AdamState::for_weights(weights);

  const std::size_t n = stage.dataset.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const int threads = std::max(1, std::min<int>(config.threads, config.batch_size));
  std::vector<Gradients> slot_grads(batch, weights.zeros_like());
  std::vector<double> slot_loss(batch);
  Gradients total = weights.zeros_like();

  for (int epoch = 0; epoch < config.epochs_per_stage; ++epoch) {
    const auto order = shuffled_order(n, config.rng_seed, stage.stage_id, epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::size_t count = std::min(batch, n - start);
      const float scale = 1.0f / static_cast<float>(count);
      auto work = [&](std::size_t j) {
        const std::size_t idx = order[start + j];
        const TrainingSample& s = stage.dataset[idx];
        clear(slot_grads[j]);
        if (config.augment) {
          const auto params = sample_augment(derive_seed(config.rng_seed, hash_name("augment"),
                                                         static_cast<std::uint64_t>(stage.stage_id),
                                                         static_cast<std::uint64_t>(epoch), idx));
          const auto [f, m] = apply_augment(s.frame, s.target, params);
          slot_loss[j] = accumulate_gradients(weights, f, m, config.zero_class_weight, slot_grads[j], scale);
        } else {
          slot_loss[j] = accumulate_gradients(weights, s.frame, s.target, config.zero_class_weight, slot_grads[j], scale);
        }
      };
      if (threads == 1) {
        for (std::size_t j = 0; j < count; ++j) work(j);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t j = static_cast<std::size_t>(t); j < count; j += static_cast<std::size_t>(threads)) work(j);
          });
        for (auto& th : pool) th.join();
      }
      // Fixed-order reduction keeps results independent of the thread count.
      clear(total);
      for (std::size_t j = 0; j < count; ++j) {
        if (!std::isfinite(slot_loss[j]))
          throw NumericError("train: non-finite loss at stage " + std::to_string(stage.stage_id) + ", epoch " +
                             std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
        epoch_loss += slot_loss[j];
        add_into(total, slot_grads[j]);
      }
      try {
        adam_step(weights, total, state, config);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (stage " + std::to_string(stage.stage_id) + ", epoch " +
                           std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1) + ")");
      }
    }
    log.push_back({stage.stage_id, epoch + 1, epoch_loss / static_cast<double>(n)});
  }
  return weights;
}

void check_curriculum(const std::vector<CurriculumStage>& stages) {
  for (std::size_t k = 1; k < stages.size(); ++k)
    for (Instrument d : stages[k - 1].domains)
      if (std::find(stages[k].domains.begin(), stages[k].domains.end(), d) == stages[k].domains.end())
        throw UsageError("curriculum: stage " + std::to_string(stages[k].stage_id) + " drops domain " +
                         std::string(to_string(d)) + " of the previous stage");
}

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "stage,epoch,mean_loss\n";
  for (const auto& e : log) os << e.stage << ',' << e.epoch << ',' << format_decimal(e.mean_loss) << '\n';
  return os.str();
}

std::vector<ModelWeights> train_curriculum(const ModelWeights& initial, const std::vector<CurriculumStage>& stages,
                                           const TrainConfig& config, const std::filesystem::path& checkpoint_dir,
                                           std::vector<EpochLog>* log_out) {
  config.validate();
  check_curriculum(stages);
  std::error_code ec;
  std::filesystem::create_directories(checkpoint_dir, ec);
  if (ec) throw DataError("train: cannot create '" + checkpoint_dir.string() + "': " + ec.message());
  std::vector<ModelWeights> models;
  std::vector<EpochLog> log;
  ModelWeights current = initial;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    // Optimizer moments restart with each stage; only the weights carry over.
    current = train_stage(std::move(current), stages[k], config, log);
    save_weights(checkpoint_dir / ("stage_" + std::to_string(k + 1) + ".mtjw"), current);
    std::ofstream(checkpoint_dir / "training_log.csv", std::ios::binary | std::ios::trunc) << format_training_log(log);
    models.push_back(current);
  }
  if (log_out) *log_out = std::move(log);
  return models;
}

}  // namespace mtj

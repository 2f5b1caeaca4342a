#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "saslm/augment.hpp"
#include "saslm/checkpoint.hpp"
#include "saslm/corpus.hpp"
#include "saslm/flops.hpp"
#include "saslm/model.hpp"
#include "saslm/objective.hpp"
#include "saslm/optimizer.hpp"
#include "saslm/strategy.hpp"

namespace saslm {

struct TrainConfig {
  EncoderConfig encoder;
  Strategy strategy = Strategy::SAS;
  int epochs = 10;
  int batch_size = 64;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.1;
  AdamConfig adam;
  std::uint64_t seed = 1;
  int checkpoint_every = 1;  // epochs between checkpoints; 0 = final only
  int log_every = 50;        // steps between metrics rows
  double lambda_start = 50.0;
  double lambda_end = 200.0;
  // Auto follows the strategy: scheduled variants interpolate start -> end
  // across epochs, constant variants and the two-network baseline hold start.
  enum class LambdaMode { Auto, Constant, EpochLinear };
  LambdaMode lambda_mode = LambdaMode::Auto;
  ColdStartMode cold_start = ColdStartMode::Unigram;

  LambdaSchedule lambda_schedule() const {
    LambdaSchedule s;
    const bool linear = lambda_mode == LambdaMode::Auto ? uses_lambda_schedule(strategy)
                                                        : lambda_mode == LambdaMode::EpochLinear;
    s.mode = linear ? LambdaSchedule::Mode::EpochLinear : LambdaSchedule::Mode::Constant;
    s.start = lambda_start;
    s.end = lambda_end;
    s.total_epochs = epochs;
    return s;
  }

  void validate() const;
};

// One metrics row; appended at the logging cadence and at epoch boundaries.
struct MetricsRecord {
  std::uint64_t step = 0;
  int epoch = 0;
  float mlm_loss = 0.0f;
  float rtd_loss = 0.0f;
  float lambda = 0.0f;
  float total = 0.0f;
  float rtd_accuracy = 0.0f;
  std::uint64_t encoder_forward_count = 0;
  double wall_seconds = 0.0;
  std::uint64_t cumulative_flops = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

// Per-batch view handed to test hooks after the optimizer step.
struct BatchObservation {
  int epoch = 0;
  std::uint64_t step = 0;
  const AugmentedBatch* batch = nullptr;
  std::uint64_t forwards_this_batch = 0;
  LossBreakdown loss;
};

struct TrainHooks {
  std::function<void(const BatchObservation&)> on_batch;
};

struct TrainSummary {
  std::vector<MetricsRecord> metrics;
  std::string final_checkpoint;
  std::uint64_t steps = 0;
};

// The per-epoch training loop: batch assembly per strategy, one encoder
// pass per batch (two for the two-network baseline), combined loss,
// AdamW update, next-epoch replacement sampling into the cache, metrics
// and checkpoints. Deterministic given the config seed.
class Trainer {
public:
  Trainer(TrainConfig cfg, const SequenceStore& corpus, std::vector<double> unigram, std::string run_dir);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // Continue from an epoch-boundary checkpoint produced by an identical
  // config and corpus.
  void restore(const std::string& checkpoint_path);

  TrainSummary run(const TrainHooks* hooks = nullptr);

  const ModelState& model() const { return state_; }
  const ModelState* generator() const { return gen_state_ ? &*gen_state_ : nullptr; }
  const AdamW& optimizer() const { return *opt_; }
  const ReplacementCache& cache() const { return cache_; }
  std::uint64_t step() const { return step_; }
  int epochs_completed() const { return epoch_; }
  std::uint64_t cumulative_flops() const { return cumulative_flops_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  const LrSchedule& lr_schedule() const { return lr_; }

  TrainCheckpoint make_checkpoint() const;

private:
  struct StepOutcome {
    LossBreakdown loss;
    float rtd_accuracy = 0.0f;
    std::uint64_t forwards = 0;
  };

  void train_epoch(int epoch, const TrainHooks* hooks);
  StepOutcome step_single_net(const AugmentedBatch& ab, int epoch, bool sample_next,
                              const std::vector<const TokenSequence*>& seqs);
  StepOutcome step_two_net(const std::vector<const TokenSequence*>& seqs,
                           const std::vector<PositionSet>& position_sets, int epoch, AugmentedBatch& disc_out);
  void log_metrics(int epoch, const StepOutcome& out);
  std::uint64_t total_forwards() const;

  TrainConfig cfg_;
  const SequenceStore& corpus_;
  std::vector<double> unigram_;
  std::string run_dir_;
  LambdaSchedule schedule_;
  LrSchedule lr_;
  std::int64_t steps_per_epoch_ = 0;

  ModelState state_;
  std::optional<ModelState> gen_state_;
  std::vector<ParamRef<float>> registry_;
  std::optional<AdamW> opt_;
  ReplacementCache cache_;

  int epoch_ = 0;  // completed epochs
  std::uint64_t step_ = 0;
  std::uint64_t cumulative_flops_ = 0;
  std::vector<MetricsRecord> metrics_;
  double wall_start_ = 0.0;
};

}  // namespace saslm

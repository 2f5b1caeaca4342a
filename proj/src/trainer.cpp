#include "saslm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace saslm {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  encoder.validate();
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
    throw std::invalid_argument("TrainConfig: warmup_fraction must be in [0,1]");
  if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
  if (lambda_start < 0.0 || lambda_end < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
}

std::string metrics_csv_header() {
  return "step,epoch,mlm_loss,rtd_loss,lambda,total,rtd_accuracy,encoder_forward_count,wall_seconds,"
         "cumulative_flops";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string out;
  out += std::to_string(r.step);
  out += ',' + std::to_string(r.epoch);
  out += ',' + fmt("%.9g", r.mlm_loss);
  out += ',' + fmt("%.9g", r.rtd_loss);
  out += ',' + fmt("%.9g", r.lambda);
  out += ',' + fmt("%.9g", r.total);
  out += ',' + fmt("%.9g", r.rtd_accuracy);
  out += ',' + std::to_string(r.encoder_forward_count);
  out += ',' + fmt("%.3f", r.wall_seconds);
  out += ',' + std::to_string(r.cumulative_flops);
  return out;
}

Trainer::Trainer(TrainConfig cfg, const SequenceStore& corpus, std::vector<double> unigram, std::string run_dir)
    : cfg_(cfg), corpus_(corpus), unigram_(std::move(unigram)), run_dir_(std::move(run_dir)) {
  cfg_.validate();
  if (corpus_.size() == 0) throw std::runtime_error("Trainer: empty corpus");
  if (static_cast<int>(unigram_.size()) != cfg_.encoder.vocab_size)
    throw std::invalid_argument("Trainer: unigram table size does not match vocabulary");
  schedule_ = cfg_.lambda_schedule();
  steps_per_epoch_ = static_cast<std::int64_t>(
      (corpus_.size() + static_cast<std::size_t>(cfg_.batch_size) - 1) / static_cast<std::size_t>(cfg_.batch_size));
  const std::int64_t total = steps_per_epoch_ * cfg_.epochs;
  lr_ = LrSchedule{cfg_.peak_lr, static_cast<std::int64_t>(std::llround(cfg_.warmup_fraction * static_cast<double>(total))),
                   total};
  state_ = ModelState::init(cfg_.encoder, cfg_.seed);
  if (is_two_network(cfg_.strategy))
    gen_state_ = ModelState::init(electra_generator_config(cfg_.encoder), cfg_.seed + 1);
  registry_ = state_.registry();
  if (gen_state_) {
    auto gen_regs = gen_state_->registry();
    registry_.insert(registry_.end(), gen_regs.begin(), gen_regs.end());
  }
  opt_.emplace(registry_, cfg_.adam);
  std::filesystem::create_directories(run_dir_);
  wall_start_ = now_seconds();
}

void Trainer::restore(const std::string& checkpoint_path) {
  TrainCheckpoint ckpt = load_checkpoint(checkpoint_path);
  if (!(ckpt.encoder == cfg_.encoder) || ckpt.strategy != cfg_.strategy || ckpt.root_seed != cfg_.seed)
    throw std::runtime_error("restore: checkpoint does not match the run configuration");
  if (ckpt.generator.has_value() != gen_state_.has_value())
    throw std::runtime_error("restore: generator presence mismatch");
  state_ = std::move(ckpt.model);
  if (gen_state_) *gen_state_ = std::move(*ckpt.generator);
  // Registries hold raw pointers into the states; rebuild after the move.
  registry_ = state_.registry();
  if (gen_state_) {
    auto gen_regs = gen_state_->registry();
    registry_.insert(registry_.end(), gen_regs.begin(), gen_regs.end());
  }
  opt_.emplace(registry_, cfg_.adam);
  opt_->restore(ckpt.adam_t, std::move(ckpt.adam_m), std::move(ckpt.adam_v));
  cache_ = std::move(ckpt.cache);
  epoch_ = ckpt.epochs_completed;
  step_ = ckpt.step;
  state_.forward_count = ckpt.forward_count;
  if (gen_state_) gen_state_->forward_count = 0;  // aggregate lives in state_.forward_count on restore
  cumulative_flops_ = ckpt.cumulative_flops;
}

std::uint64_t Trainer::total_forwards() const {
  return state_.forward_count + (gen_state_ ? gen_state_->forward_count : 0);
}

TrainCheckpoint Trainer::make_checkpoint() const {
  TrainCheckpoint ckpt;
  ckpt.encoder = cfg_.encoder;
  ckpt.strategy = cfg_.strategy;
  ckpt.root_seed = cfg_.seed;
  ckpt.epochs_completed = epoch_;
  ckpt.step = step_;
  ckpt.forward_count = total_forwards();
  ckpt.cumulative_flops = cumulative_flops_;
  ckpt.adam_t = opt_->steps_taken();
  ckpt.model = state_;
  if (gen_state_) ckpt.generator = *gen_state_;
  ckpt.adam_m = opt_->first_moments();
  ckpt.adam_v = opt_->second_moments();
  ckpt.cache = cache_;
  ckpt.cache_epoch_produced = cache_.empty() ? -1 : cache_.entries().begin()->second.epoch_produced;
  return ckpt;
}

TrainSummary Trainer::run(const TrainHooks* hooks) {
  std::ofstream csv(run_dir_ + "/metrics.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write metrics: " + run_dir_ + "/metrics.csv");
  csv << metrics_csv_header() << "\n";
  auto flush_metrics = [&csv, written = std::size_t(0), this]() mutable {
    for (; written < metrics_.size(); ++written) csv << metrics_csv_row(metrics_[written]) << "\n";
    csv.flush();
  };

  for (int e = epoch_; e < cfg_.epochs; ++e) {
    train_epoch(e, hooks);
    epoch_ = e + 1;
    const bool sampled_this_epoch = uses_self_augmentation(cfg_.strategy) && e + 1 < cfg_.epochs;
    if (sampled_this_epoch) {
      if (cache_.size() != corpus_.size())
        throw std::runtime_error("epoch barrier violated: cache holds " + std::to_string(cache_.size()) +
                                 " entries for " + std::to_string(corpus_.size()) + " instances");
      cache_.save(run_dir_ + "/cache_epoch_" + std::to_string(e + 1) + ".bin");
    }
    if (cfg_.checkpoint_every > 0 && (e + 1) % cfg_.checkpoint_every == 0)
      save_checkpoint(make_checkpoint(), run_dir_ + "/ckpt_epoch_" + std::to_string(e + 1) + ".bin");
    flush_metrics();
  }
  std::string final_path = run_dir_ + "/final.bin";
  save_checkpoint(make_checkpoint(), final_path);
  flush_metrics();
  return TrainSummary{metrics_, final_path, step_};
}

void Trainer::train_epoch(int epoch, const TrainHooks* hooks) {
  BatchIter iter(corpus_, cfg_.batch_size, epoch, cfg_.seed);
  const std::int64_t last_step_of_epoch = static_cast<std::int64_t>(step_) + steps_per_epoch_ - 1;
  for (auto idxs = iter.next(); !idxs.empty(); idxs = iter.next()) {
    std::vector<const TokenSequence*> seqs;
    std::vector<PositionSet> position_sets;
    seqs.reserve(idxs.size());
    position_sets.reserve(idxs.size());
    for (std::size_t i : idxs) {
      seqs.push_back(&corpus_.at(i));
      position_sets.push_back(select_positions(*seqs.back(), epoch, cfg_.seed));
    }

    StepOutcome out;
    AugmentedBatch ab;
    if (is_two_network(cfg_.strategy)) {
      out = step_two_net(seqs, position_sets, epoch, ab);
    } else {
      std::vector<std::vector<int>> replacements;
      replacements.reserve(seqs.size());
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        const TokenSequence& seq = *seqs[i];
        const auto& pos = position_sets[i].indices;
        if (cfg_.strategy == Strategy::MASK_MLM) {
          replacements.emplace_back(pos.size(), kMaskId);
        } else if (uses_self_augmentation(cfg_.strategy) && epoch > 0) {
          CacheEntry entry = cache_.consume(seq.instance_id, epoch - 1);
          if (entry.positions != pos)
            throw std::runtime_error("cache entry positions diverge from the epoch draw for instance " +
                                     std::to_string(seq.instance_id));
          replacements.push_back(std::move(entry.token_ids));
        } else {
          Rng rng(cfg_.seed, RngPurpose::ColdStart, static_cast<std::uint64_t>(seq.instance_id),
                  static_cast<std::uint64_t>(epoch));
          replacements.push_back(
              cold_start_sample(unigram_, cfg_.cold_start, static_cast<int>(pos.size()), rng));
        }
      }
      ab = make_augmented_batch(seqs, position_sets, replacements, cfg_.encoder.vocab_size);
      const bool sample_next = uses_self_augmentation(cfg_.strategy) && epoch + 1 < cfg_.epochs;
      out = step_single_net(ab, epoch, sample_next, seqs);
    }

    const bool log_now =
        (step_ % static_cast<std::uint64_t>(cfg_.log_every) == 0) ||
        (static_cast<std::int64_t>(step_) == last_step_of_epoch);
    if (log_now) log_metrics(epoch, out);
    if (hooks && hooks->on_batch) {
      BatchObservation obs;
      obs.epoch = epoch;
      obs.step = step_;
      obs.batch = &ab;
      obs.forwards_this_batch = out.forwards;
      obs.loss = out.loss;
      hooks->on_batch(obs);
    }
    ++step_;
  }
}

Trainer::StepOutcome Trainer::step_single_net(const AugmentedBatch& ab, int epoch, bool sample_next,
                                              const std::vector<const TokenSequence*>& seqs) {
  const int k = ab.augmented.seq_len;
  const std::uint64_t forwards_before = total_forwards();
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Rng drop(cfg_.seed, RngPurpose::Dropout, step_);

  Value<float> hidden = encoder_forward(tape, bind, state_, ab.augmented, /*train_mode=*/true, &drop);

  // The MLM head runs at the union of this epoch's loss positions and the
  // next epoch's sampling positions; the loss sees only the former, the
  // sampler only the latter.
  std::vector<PositionSet> next_sets;
  std::vector<int> head_rows;          // flat (b * k + pos), deduped per instance
  std::vector<int> loss_rows;          // indices into head_rows
  std::vector<int> targets;            // original ids aligned with loss_rows
  std::vector<std::vector<int>> sample_rows(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& cur = ab.positions[i];
    std::vector<int> uni = cur;
    if (sample_next) {
      next_sets.push_back(select_positions(*seqs[i], epoch + 1, cfg_.seed));
      for (int p : next_sets.back().indices)
        if (!std::binary_search(cur.begin(), cur.end(), p)) uni.push_back(p);
      std::sort(uni.begin(), uni.end());
    }
    const int base_row = static_cast<int>(head_rows.size());
    for (int p : uni) head_rows.push_back(static_cast<int>(i) * k + p);
    auto row_of = [&uni, base_row](int p) {
      return base_row + static_cast<int>(std::lower_bound(uni.begin(), uni.end(), p) - uni.begin());
    };
    for (int p : cur) {
      loss_rows.push_back(row_of(p));
      targets.push_back(ab.original.ids[static_cast<std::size_t>(static_cast<int>(i) * k + p)]);
    }
    if (sample_next)
      for (int p : next_sets.back().indices) sample_rows[i].push_back(row_of(p));
  }

  Value<float> logp = mlm_log_probs(tape, bind, state_, hidden, head_rows);
  LossBreakdown loss;
  Value<float> mlm = mlm_loss(tape, row_gather(logp, loss_rows), targets, &loss.mlm_empty);
  Value<float> total = mlm;
  Value<float> z{};
  if (uses_rtd(cfg_.strategy)) {
    z = rtd_logits(tape, bind, state_, hidden);
    Value<float> rtd = rtd_loss(tape, z, ab.labels, ab.augmented.pad_mask);
    loss.lambda_t = static_cast<float>(schedule_.value(epoch));
    loss.rtd_loss = rtd.val()(0, 0);
    total = combined_loss(tape, mlm, rtd, loss.lambda_t);
  }
  loss.mlm_loss = mlm.val()(0, 0);
  loss.total = total.val()(0, 0);
  if (!std::isfinite(loss.total) || !std::isfinite(loss.mlm_loss) || !std::isfinite(loss.rtd_loss))
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (mlm=" +
                             std::to_string(loss.mlm_loss) + ", rtd=" + std::to_string(loss.rtd_loss) + ")");

  tape.backward(total);
  std::vector<MatF> grads;
  grads.reserve(registry_.size());
  for (auto& ref : registry_) grads.push_back(bind.grad_of(*ref.mat));
  opt_->step(registry_, grads, lr_.value(static_cast<std::int64_t>(step_)));

  // Sampling reads forward values only; gradients never flow through it.
  if (sample_next) {
    const MatF& lp = logp.val();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      Rng rng(cfg_.seed, RngPurpose::SampleNext, static_cast<std::uint64_t>(seqs[i]->instance_id),
              static_cast<std::uint64_t>(epoch));
      CacheEntry entry;
      entry.epoch_produced = epoch;
      entry.positions = next_sets[i].indices;
      entry.token_ids.reserve(sample_rows[i].size());
      for (int row : sample_rows[i])
        entry.token_ids.push_back(sample_replacement(lp.row(row).data(), cfg_.encoder.vocab_size, rng));
      cache_.store(seqs[i]->instance_id, std::move(entry));
    }
  }

  StepOutcome out;
  out.loss = loss;
  out.forwards = total_forwards() - forwards_before;
  if (uses_rtd(cfg_.strategy)) {
    const MatF& zv = z.val();
    std::int64_t correct = 0, n = 0;
    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
      if (!ab.augmented.pad_mask[static_cast<std::size_t>(i)]) continue;
      bool pred = zv(i, 0) >= 0.0f;
      if (pred == (ab.labels[static_cast<std::size_t>(i)] != 0)) ++correct;
      ++n;
    }
    out.rtd_accuracy = n ? static_cast<float>(static_cast<double>(correct) / static_cast<double>(n)) : 0.0f;
  }
  for (const auto& pos : ab.positions)
    cumulative_flops_ +=
        step_flops(cfg_.encoder, cfg_.strategy, 1, static_cast<int>(pos.size())).total();
  return out;
}

Trainer::StepOutcome Trainer::step_two_net(const std::vector<const TokenSequence*>& seqs,
                                           const std::vector<PositionSet>& position_sets, int epoch,
                                           AugmentedBatch& disc_out) {
  const std::uint64_t forwards_before = total_forwards();
  const int k = cfg_.encoder.seq_len;
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Rng drop(cfg_.seed, RngPurpose::Dropout, step_);

  // Generator sees [MASK] at the selected positions and predicts originals.
  std::vector<std::vector<int>> mask_repl;
  mask_repl.reserve(seqs.size());
  for (const auto& ps : position_sets) mask_repl.emplace_back(ps.indices.size(), kMaskId);
  AugmentedBatch gen_ab = make_augmented_batch(seqs, position_sets, mask_repl, cfg_.encoder.vocab_size);

  std::vector<int> flat_rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (int p : position_sets[i].indices) {
      flat_rows.push_back(static_cast<int>(i) * k + p);
      targets.push_back(gen_ab.original.ids[static_cast<std::size_t>(flat_rows.back())]);
    }

  Value<float> gen_hidden = encoder_forward(tape, bind, *gen_state_, gen_ab.augmented, true, &drop);
  Value<float> gen_logp = mlm_log_probs(tape, bind, *gen_state_, gen_hidden, flat_rows);
  LossBreakdown loss;
  Value<float> gen_mlm = mlm_loss(tape, gen_logp, targets, &loss.mlm_empty);

  // Straight sampling: the discriminator input is built from detached draws.
  const MatF& lp = gen_logp.val();
  std::vector<std::vector<int>> sampled(seqs.size());
  int row = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Rng rng(cfg_.seed, RngPurpose::SampleNext, static_cast<std::uint64_t>(seqs[i]->instance_id),
            static_cast<std::uint64_t>(epoch));
    for (std::size_t j = 0; j < position_sets[i].indices.size(); ++j)
      sampled[i].push_back(sample_replacement(lp.row(row++).data(), cfg_.encoder.vocab_size, rng));
  }
  disc_out = make_augmented_batch(seqs, position_sets, sampled, cfg_.encoder.vocab_size);

  Value<float> disc_hidden = encoder_forward(tape, bind, state_, disc_out.augmented, true, &drop);
  Value<float> z = rtd_logits(tape, bind, state_, disc_hidden);
  Value<float> rtd = rtd_loss(tape, z, disc_out.labels, disc_out.augmented.pad_mask);
  loss.lambda_t = static_cast<float>(schedule_.value(epoch));
  loss.mlm_loss = gen_mlm.val()(0, 0);
  loss.rtd_loss = rtd.val()(0, 0);
  Value<float> total = combined_loss(tape, gen_mlm, rtd, loss.lambda_t);
  loss.total = total.val()(0, 0);
  if (!std::isfinite(loss.total))
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (mlm=" +
                             std::to_string(loss.mlm_loss) + ", rtd=" + std::to_string(loss.rtd_loss) + ")");

  tape.backward(total);
  std::vector<MatF> grads;
  grads.reserve(registry_.size());
  for (auto& ref : registry_) grads.push_back(bind.grad_of(*ref.mat));
  opt_->step(registry_, grads, lr_.value(static_cast<std::int64_t>(step_)));

  StepOutcome out;
  out.loss = loss;
  out.forwards = total_forwards() - forwards_before;
  const MatF& zv = z.val();
  std::int64_t correct = 0, n = 0;
  for (Eigen::Index i = 0; i < zv.rows(); ++i) {
    if (!disc_out.augmented.pad_mask[static_cast<std::size_t>(i)]) continue;
    if ((zv(i, 0) >= 0.0f) == (disc_out.labels[static_cast<std::size_t>(i)] != 0)) ++correct;
    ++n;
  }
  out.rtd_accuracy = n ? static_cast<float>(static_cast<double>(correct) / static_cast<double>(n)) : 0.0f;
  for (const auto& ps : position_sets)
    cumulative_flops_ +=
        step_flops(cfg_.encoder, cfg_.strategy, 1, static_cast<int>(ps.indices.size())).total();
  return out;
}

void Trainer::log_metrics(int epoch, const StepOutcome& out) {
  MetricsRecord r;
  r.step = step_;
  r.epoch = epoch;
  r.mlm_loss = out.loss.mlm_loss;
  r.rtd_loss = out.loss.rtd_loss;
  r.lambda = out.loss.lambda_t;
  r.total = out.loss.total;
  r.rtd_accuracy = out.rtd_accuracy;
  r.encoder_forward_count = total_forwards();
  r.wall_seconds = now_seconds() - wall_start_;
  r.cumulative_flops = cumulative_flops_;
  metrics_.push_back(r);
}

}  // namespace saslm

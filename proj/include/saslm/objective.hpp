#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "saslm/tape.hpp"

namespace saslm {

// Per-epoch weight on the replaced-token-detection loss.
struct LambdaSchedule {
  enum class Mode { Constant, EpochLinear };
  Mode mode = Mode::EpochLinear;
  double start = 50.0;
  double end = 200.0;
  int total_epochs = 1;

  // Piecewise-constant within an epoch; epoch indices run 0..T-1.
  double value(int epoch) const {
    if (epoch < 0 || epoch >= total_epochs) throw std::invalid_argument("LambdaSchedule: epoch out of range");
    if (mode == Mode::Constant || total_epochs == 1) return start;
    return start + (end - start) * static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  }

  static Mode parse_mode(const std::string& s) {
    if (s == "constant") return Mode::Constant;
    if (s == "epoch_linear") return Mode::EpochLinear;
    throw std::invalid_argument("LambdaSchedule: unknown mode '" + s + "'");
  }
  static std::string mode_name(Mode m) { return m == Mode::Constant ? "constant" : "epoch_linear"; }
};

// Scalar components of one training step's loss.
struct LossBreakdown {
  float mlm_loss = 0.0f;
  float rtd_loss = 0.0f;
  float lambda_t = 0.0f;
  float total = 0.0f;
  bool mlm_empty = false;  // set when the loss was requested over zero positions
};

// Mean over the given positions of -log p(target | x-tilde). `log_probs`
// rows must align with `targets`. Zero positions yield a constant 0.
template <class S>
Value<S> mlm_loss(Tape<S>& tape, Value<S> log_probs, const std::vector<int>& targets, bool* empty_flag = nullptr) {
  if (targets.empty()) {
    if (empty_flag) *empty_flag = true;
    return tape.scalar_constant(S(0));
  }
  if (empty_flag) *empty_flag = false;
  return scale(mean_all(pick_per_row(log_probs, targets)), S(-1));
}

// Mean binary cross-entropy over non-pad positions, computed stably from
// logits. Labels: 1 when the token equals the original, 0 when replaced.
template <class S>
Value<S> rtd_loss(Tape<S>& tape, Value<S> logits, const std::vector<std::uint8_t>& labels,
                  const std::vector<std::uint8_t>& pad_mask) {
  (void)tape;
  Mat<S> y(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = labels[i] ? S(1) : S(0);
  return bce_with_logits_masked_mean(logits, y, pad_mask);
}

// total = mlm + lambda * rtd, with lambda frozen for the epoch.
template <class S>
Value<S> combined_loss(Tape<S>& tape, Value<S> mlm, Value<S> rtd, double lambda) {
  (void)tape;
  return add(mlm, scale(rtd, static_cast<S>(lambda)));
}

}  // namespace saslm

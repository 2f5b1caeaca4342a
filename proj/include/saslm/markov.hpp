#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "saslm/rng.hpp"

namespace saslm {

// Order-1 Markov source over a closed token set. Because its conditional
// distributions are known exactly, corpora drawn from it admit analytic
// entropy floors and exact KL evaluation of a trained generator.
class MarkovOracle {
public:
  MarkovOracle() = default;
  MarkovOracle(Eigen::MatrixXd transition, Eigen::VectorXd initial, std::vector<std::string> token_names);

  // Random sparse-ish chain: each state puts `peak` mass on a designated
  // successor and spreads the rest over `branch` alternatives.
  static MarkovOracle random(int num_tokens, double peak, int branch, std::uint64_t seed);

  int num_tokens() const { return static_cast<int>(transition_.rows()); }
  const Eigen::MatrixXd& transition() const { return transition_; }
  const Eigen::VectorXd& initial() const { return initial_; }
  const std::vector<std::string>& token_names() const { return token_names_; }

  // Throws unless every row is a probability distribution (sum 1 +- 1e-9).
  void validate() const;

  // One document per line, seq_len tokens each, deterministic given seed.
  std::vector<std::string> generate(int num_seqs, int seq_len, std::uint64_t seed) const;

  // Stationary distribution by power iteration.
  Eigen::VectorXd stationary() const;

  // H(X_t | X_{t-1}) under the stationary law, in nats.
  double conditional_entropy() const;
  // H(X_t | X_{t-1}, X_{t+1}) under the stationary law, in nats. This is
  // the information floor for a bidirectional denoiser on clean context.
  double bidirectional_conditional_entropy() const;
  // Entropy of the stationary distribution, in nats: the best any
  // context-free predictor can do.
  double unigram_entropy() const;

  // Structured text: order, token count, names, initial, row-major rows.
  void save(const std::string& path) const;
  static MarkovOracle load(const std::string& path);

private:
  Eigen::MatrixXd transition_;
  Eigen::VectorXd initial_;
  std::vector<std::string> token_names_;
};

}  // namespace saslm

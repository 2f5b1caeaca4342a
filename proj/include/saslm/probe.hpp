#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "saslm/corpus.hpp"
#include "saslm/markov.hpp"
#include "saslm/model.hpp"

namespace saslm {

// Intrinsic stand-ins for downstream evaluation. NaN marks fields a probe
// run did not compute.
struct EvalReport {
  double mlm_ce = std::numeric_limits<double>::quiet_NaN();
  double mlm_ppl = std::numeric_limits<double>::quiet_NaN();
  double rtd_accuracy = std::numeric_limits<double>::quiet_NaN();
  double rtd_auc = std::numeric_limits<double>::quiet_NaN();
  double generator_mean_kl = std::numeric_limits<double>::quiet_NaN();
  double probe_accuracy = std::numeric_limits<double>::quiet_NaN();
};

std::string eval_report_csv_header();
std::string eval_report_csv_row(const std::string& checkpoint_path, const EvalReport& r);

struct IntrinsicResult {
  double mlm_ce = 0.0;        // nats per evaluated position
  double rtd_accuracy = 0.0;  // threshold 0.5
  double rtd_auc = 0.0;       // rank statistic over (replaced, unreplaced) pairs
};

// Evaluation-mode pass over a held-out corpus with a fixed augmentation
// draw: positions selected per instance from `seed`, replacements drawn from
// the held-out unigram table. Deterministic given (state, heldout, seed).
IntrinsicResult intrinsic_eval(const ModelState& state, const SequenceStore& heldout,
                               const std::vector<double>& unigram, std::uint64_t seed);

// Mean KL(truth || model) of the MLM generating distribution against the
// oracle's conditional q(. | previous token), evaluated at augmented
// positions whose previous token is real. Model mass is renormalized over
// non-special tokens.
double generator_kl(const ModelState& state, const MarkovOracle& oracle, const SequenceStore& heldout,
                    const Vocab& vocab, const std::vector<double>& unigram, std::uint64_t seed,
                    int max_positions = 2000);

// Frozen-encoder logistic probe on the [CLS] representation separating
// sequences drawn from two different oracles. Full-batch gradient descent to
// tolerance; returns held-out accuracy.
double linear_probe(const ModelState& state, const SequenceStore& corpus_a, const SequenceStore& corpus_b,
                    double train_fraction, std::uint64_t seed);

// Brute-force pairwise AUC used as the oracle for the rank statistic.
double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& is_positive);
// Rank-statistic AUC (average ranks on ties).
double rank_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& is_positive);

// KL(truth || model) for one position: truth lives on oracle token indices,
// the model row on vocabulary ids with its mass renormalized over the
// non-special support. Throws when that support carries zero mass.
double kl_against_truth(const Eigen::VectorXd& truth_row, const float* model_log_probs, int vocab_size,
                        const std::vector<int>& oracle_to_vocab);

}  // namespace saslm

#include "saslm/probe.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "saslm/augment.hpp"
#include "saslm/tape.hpp"

namespace saslm {

namespace {

constexpr int kEvalBatch = 32;

std::string fmt_field(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Forward a chunk of instances in eval mode, with or without augmentation.
struct EvalChunk {
  AugmentedBatch batch;
  MatF hidden;           // (n * k) x H
  std::vector<int> mlm_rows;
  MatF mlm_logp;         // rows aligned with mlm_rows
  MatF rtd_z;            // (n * k) x 1
};

EvalChunk eval_forward(const ModelState& state, const std::vector<const TokenSequence*>& seqs,
                       const std::vector<PositionSet>& pos_sets, const std::vector<std::vector<int>>& repls,
                       bool want_heads) {
  EvalChunk out;
  out.batch = make_augmented_batch(seqs, pos_sets, repls, state.config.vocab_size);
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Value<float> hidden = encoder_forward(tape, bind, state, out.batch.augmented, /*train_mode=*/false);
  out.hidden = hidden.val();
  if (want_heads) {
    const int k = out.batch.augmented.seq_len;
    for (std::size_t i = 0; i < seqs.size(); ++i)
      for (int p : out.batch.positions[i]) out.mlm_rows.push_back(static_cast<int>(i) * k + p);
    out.mlm_logp = mlm_log_probs(tape, bind, state, hidden, out.mlm_rows).val();
    out.rtd_z = rtd_logits(tape, bind, state, hidden).val();
  }
  return out;
}

// Fixed evaluation corruption: fresh position draw and unigram replacements
// per instance, independent of any training stream.
void eval_augmentation(const TokenSequence& seq, const std::vector<double>& unigram, std::uint64_t seed,
                       PositionSet& pos, std::vector<int>& repl) {
  pos = select_positions(seq, /*epoch=*/0, seed);
  Rng rng(seed, RngPurpose::Eval, static_cast<std::uint64_t>(seq.instance_id));
  repl = cold_start_sample(unigram, ColdStartMode::Unigram, static_cast<int>(pos.indices.size()), rng);
}

}  // namespace

std::string eval_report_csv_header() {
  return "checkpoint,mlm_ce,mlm_ppl,rtd_accuracy,rtd_auc,generator_mean_kl,probe_accuracy";
}

std::string eval_report_csv_row(const std::string& checkpoint_path, const EvalReport& r) {
  std::string out = checkpoint_path;
  out += ',' + fmt_field(r.mlm_ce);
  out += ',' + fmt_field(r.mlm_ppl);
  out += ',' + fmt_field(r.rtd_accuracy);
  out += ',' + fmt_field(r.rtd_auc);
  out += ',' + fmt_field(r.generator_mean_kl);
  out += ',' + fmt_field(r.probe_accuracy);
  return out;
}

double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& is_positive) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (is_positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0) throw std::runtime_error("pairwise_auc: need both classes");
  return wins / static_cast<double>(pairs);
}

double rank_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& is_positive) {
  const std::size_t n = scores.size();
  if (n == 0 || is_positive.size() != n) throw std::invalid_argument("rank_auc: bad inputs");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  std::int64_t npos = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (is_positive[t]) {
      pos_rank_sum += rank[t];
      ++npos;
    }
  std::int64_t nneg = static_cast<std::int64_t>(n) - npos;
  if (npos == 0 || nneg == 0) throw std::runtime_error("rank_auc: need both classes");
  return (pos_rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1)) /
         (static_cast<double>(npos) * static_cast<double>(nneg));
}

double kl_against_truth(const Eigen::VectorXd& truth_row, const float* model_log_probs, int vocab_size,
                        const std::vector<int>& oracle_to_vocab) {
  double mass = 0.0;
  for (int t = kNumSpecials; t < vocab_size; ++t) mass += std::exp(static_cast<double>(model_log_probs[t]));
  if (mass <= 0.0) throw std::runtime_error("generator_kl: zero renormalized model mass");
  double kl = 0.0;
  for (int j = 0; j < truth_row.size(); ++j) {
    double q = truth_row(j);
    if (q <= 0.0) continue;
    double pm = std::exp(static_cast<double>(model_log_probs[oracle_to_vocab[static_cast<std::size_t>(j)]])) / mass;
    kl += q * std::log(q / pm);
  }
  return kl;
}

IntrinsicResult intrinsic_eval(const ModelState& state, const SequenceStore& heldout,
                               const std::vector<double>& unigram, std::uint64_t seed) {
  if (heldout.size() == 0) throw std::runtime_error("intrinsic_eval: empty held-out corpus");
  double ce_sum = 0.0;
  std::int64_t ce_n = 0;
  std::int64_t acc_correct = 0, acc_n = 0;
  std::vector<double> scores;        // replaced-ness score: -logit
  std::vector<std::uint8_t> is_replaced;

  for (std::size_t start = 0; start < heldout.size(); start += kEvalBatch) {
    std::vector<const TokenSequence*> seqs;
    std::vector<PositionSet> pos_sets;
    std::vector<std::vector<int>> repls;
    for (std::size_t i = start; i < std::min(heldout.size(), start + kEvalBatch); ++i) {
      seqs.push_back(&heldout.at(i));
      PositionSet ps;
      std::vector<int> rp;
      eval_augmentation(*seqs.back(), unigram, seed, ps, rp);
      pos_sets.push_back(std::move(ps));
      repls.push_back(std::move(rp));
    }
    EvalChunk chunk = eval_forward(state, seqs, pos_sets, repls, /*want_heads=*/true);
    const int k = chunk.batch.augmented.seq_len;
    int row = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i)
      for (int p : chunk.batch.positions[i]) {
        int target = chunk.batch.original.ids[static_cast<std::size_t>(static_cast<int>(i) * k + p)];
        ce_sum -= static_cast<double>(chunk.mlm_logp(row, target));
        ++row;
        ++ce_n;
      }
    for (Eigen::Index r = 0; r < chunk.rtd_z.rows(); ++r) {
      if (!chunk.batch.augmented.pad_mask[static_cast<std::size_t>(r)]) continue;
      bool label_original = chunk.batch.labels[static_cast<std::size_t>(r)] != 0;
      double z = static_cast<double>(chunk.rtd_z(r, 0));
      if ((z >= 0.0) == label_original) ++acc_correct;
      ++acc_n;
      scores.push_back(-z);
      is_replaced.push_back(label_original ? 0 : 1);
    }
  }
  IntrinsicResult out;
  out.mlm_ce = ce_sum / static_cast<double>(ce_n);
  out.rtd_accuracy = static_cast<double>(acc_correct) / static_cast<double>(acc_n);
  out.rtd_auc = rank_auc(scores, is_replaced);
  return out;
}

double generator_kl(const ModelState& state, const MarkovOracle& oracle, const SequenceStore& heldout,
                    const Vocab& vocab, const std::vector<double>& unigram, std::uint64_t seed, int max_positions) {
  if (heldout.size() == 0) throw std::runtime_error("generator_kl: empty held-out corpus");
  const int n_oracle = oracle.num_tokens();
  std::vector<int> oracle_to_vocab(static_cast<std::size_t>(n_oracle));
  std::unordered_map<int, int> vocab_to_oracle;
  for (int j = 0; j < n_oracle; ++j) {
    int vid = vocab.lookup(oracle.token_names()[static_cast<std::size_t>(j)]);
    if (vid < kNumSpecials)
      throw std::runtime_error("generator_kl: oracle token '" + oracle.token_names()[static_cast<std::size_t>(j)] +
                               "' missing from vocabulary");
    oracle_to_vocab[static_cast<std::size_t>(j)] = vid;
    vocab_to_oracle[vid] = j;
  }

  double kl_sum = 0.0;
  int evaluated = 0;
  for (std::size_t start = 0; start < heldout.size() && evaluated < max_positions; start += kEvalBatch) {
    std::vector<const TokenSequence*> seqs;
    std::vector<PositionSet> pos_sets;
    std::vector<std::vector<int>> repls;
    for (std::size_t i = start; i < std::min(heldout.size(), start + kEvalBatch); ++i) {
      seqs.push_back(&heldout.at(i));
      PositionSet ps;
      std::vector<int> rp;
      eval_augmentation(*seqs.back(), unigram, seed, ps, rp);
      pos_sets.push_back(std::move(ps));
      repls.push_back(std::move(rp));
    }
    EvalChunk chunk = eval_forward(state, seqs, pos_sets, repls, /*want_heads=*/true);
    const int k = chunk.batch.augmented.seq_len;
    int row = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const auto& pos = chunk.batch.positions[i];
      for (std::size_t pj = 0; pj < pos.size(); ++pj, ++row) {
        if (evaluated >= max_positions) continue;
        const int p = pos[static_cast<std::size_t>(pj)];
        if (p < 2) continue;  // previous token must be a word, not [CLS]
        if (std::binary_search(pos.begin(), pos.end(), p - 1)) continue;  // previous token must be real
        const int prev_id =
            chunk.batch.original.ids[static_cast<std::size_t>(static_cast<int>(i) * k + p - 1)];
        auto it = vocab_to_oracle.find(prev_id);
        if (it == vocab_to_oracle.end()) continue;
        // Model distribution renormalized over non-special tokens.
        double mass = 0.0;
        for (int t = kNumSpecials; t < state.config.vocab_size; ++t)
          mass += std::exp(static_cast<double>(chunk.mlm_logp(row, t)));
        if (mass <= 0.0) throw std::runtime_error("generator_kl: zero renormalized model mass");
        double kl = 0.0;
        for (int j = 0; j < n_oracle; ++j) {
          double q = oracle.transition()(it->second, j);
          if (q <= 0.0) continue;
          double pm = std::exp(static_cast<double>(chunk.mlm_logp(row, oracle_to_vocab[static_cast<std::size_t>(j)]))) / mass;
          kl += q * std::log(q / pm);
        }
        kl_sum += kl;
        ++evaluated;
      }
    }
  }
  if (evaluated == 0) throw std::runtime_error("generator_kl: no evaluable positions");
  return kl_sum / static_cast<double>(evaluated);
}

double linear_probe(const ModelState& state, const SequenceStore& corpus_a, const SequenceStore& corpus_b,
                    double train_fraction, std::uint64_t seed) {
  if (corpus_a.size() == 0 || corpus_b.size() == 0) throw std::runtime_error("linear_probe: empty class corpus");
  const int h = state.config.hidden;
  const std::size_t n = corpus_a.size() + corpus_b.size();
  MatD features(static_cast<Eigen::Index>(n), h);
  Eigen::VectorXd labels(static_cast<Eigen::Index>(n));

  auto encode_class = [&](const SequenceStore& store, double label, std::size_t offset) {
    for (std::size_t start = 0; start < store.size(); start += kEvalBatch) {
      std::vector<const TokenSequence*> seqs;
      std::vector<PositionSet> pos_sets;
      std::vector<std::vector<int>> repls;
      for (std::size_t i = start; i < std::min(store.size(), start + kEvalBatch); ++i) {
        seqs.push_back(&store.at(i));
        pos_sets.push_back(PositionSet{store.at(i).instance_id, 0, {}});
        repls.push_back({});
      }
      EvalChunk chunk = eval_forward(state, seqs, pos_sets, repls, /*want_heads=*/false);
      const int k = chunk.batch.augmented.seq_len;
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        features.row(static_cast<Eigen::Index>(offset + start + i)) =
            chunk.hidden.row(static_cast<Eigen::Index>(i) * k).cast<double>();
        labels(static_cast<Eigen::Index>(offset + start + i)) = label;
      }
    }
  };
  encode_class(corpus_a, 0.0, 0);
  encode_class(corpus_b, 1.0, corpus_a.size());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, RngPurpose::Probe);
  rng.shuffle(order);
  const std::size_t n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(n));
  if (n_train == 0 || n_train == n) throw std::runtime_error("linear_probe: degenerate split");

  auto class_count = [&](std::size_t from, std::size_t to) {
    int c0 = 0, c1 = 0;
    for (std::size_t i = from; i < to; ++i) (labels(static_cast<Eigen::Index>(order[i])) < 0.5 ? c0 : c1)++;
    return std::pair<int, int>(c0, c1);
  };
  auto [tr0, tr1] = class_count(0, n_train);
  auto [te0, te1] = class_count(n_train, n);
  if (tr0 == 0 || tr1 == 0 || te0 == 0 || te1 == 0)
    throw std::runtime_error("linear_probe: degenerate single-class split");

  MatD xtr(static_cast<Eigen::Index>(n_train), h);
  Eigen::VectorXd ytr(static_cast<Eigen::Index>(n_train));
  for (std::size_t i = 0; i < n_train; ++i) {
    xtr.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[i]));
    ytr(static_cast<Eigen::Index>(i)) = labels(static_cast<Eigen::Index>(order[i]));
  }

  // Full-batch gradient descent with backtracking on the logistic loss.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(h);
  double b = 0.0;
  auto loss_of = [&](const Eigen::VectorXd& wv, double bv) {
    Eigen::ArrayXd z = (xtr * wv).array() + bv;
    // log(1 + exp(-s*z)) with s = +-1, computed stably
    Eigen::ArrayXd s = 2.0 * ytr.array() - 1.0;
    Eigen::ArrayXd m = (-s * z).max(0.0);
    return (m + ((-m).exp() + (-s * z - m).exp()).log()).mean();
  };
  double lr = 1.0;
  double prev_loss = loss_of(w, b);
  for (int it = 0; it < 5000; ++it) {
    Eigen::ArrayXd p = 1.0 / (1.0 + (-((xtr * w).array() + b)).exp());
    Eigen::ArrayXd diff = p - ytr.array();
    Eigen::VectorXd gw = xtr.transpose() * diff.matrix() / static_cast<double>(n_train);
    double gb = diff.mean();
    double gmax = std::max(gw.cwiseAbs().maxCoeff(), std::abs(gb));
    if (gmax < 1e-6) break;
    double step_lr = lr;
    for (int half = 0; half < 60; ++half) {
      Eigen::VectorXd w2 = w - step_lr * gw;
      double b2 = b - step_lr * gb;
      double l2 = loss_of(w2, b2);
      if (l2 <= prev_loss) {
        w = std::move(w2);
        b = b2;
        prev_loss = l2;
        lr = std::min(step_lr * 2.0, 64.0);
        break;
      }
      step_lr *= 0.5;
    }
  }

  std::int64_t correct = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    double z = features.row(static_cast<Eigen::Index>(order[i])).dot(w) + b;
    double truth = labels(static_cast<Eigen::Index>(order[i]));
    if ((z >= 0.0) == (truth >= 0.5)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n - n_train);
}

}  // namespace saslm

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "saslm/rng.hpp"
#include "saslm/tape.hpp"

namespace saslm {

// Architecture shape knobs. Defaults are the desk-scale configuration.
struct EncoderConfig {
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  int ffn = 256;
  int vocab_size = 0;
  int seq_len = 64;
  float dropout = 0.1f;
  bool tied_embeddings = true;

  void validate() const {
    if (layers < 1 || hidden < 1 || heads < 1 || ffn < 1 || vocab_size < 1 || seq_len < 2)
      throw std::invalid_argument("EncoderConfig: all dimensions must be positive (seq_len >= 2)");
    if (hidden % heads != 0) throw std::invalid_argument("EncoderConfig: hidden must be divisible by heads");
    if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("EncoderConfig: dropout must be in [0,1)");
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline constexpr float kLayerNormEps = 1e-5f;
// Fraction of selectable positions replaced per instance per epoch.
inline constexpr double kMaskPercent = 0.15;

// A batch of encoded instances flattened to (batch * seq_len) rows.
struct TokenBatch {
  std::vector<int> ids;
  std::vector<std::uint8_t> pad_mask;
  int batch = 0;
  int seq_len = 0;
};

template <class S>
struct EncoderLayerParams {
  Mat<S> ln1_gain, ln1_bias;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> wff1, bff1, wff2, bff2;
};

// Named reference to one parameter matrix, in the fixed registry order used
// for checkpoints and optimizer state.
template <class S>
struct ParamRef {
  std::string name;
  Mat<S>* mat = nullptr;
  bool weight_decay = true;
};

// All trainable state: shared encoder, tied embedding table, the two light
// heads. The embedding table doubles as the MLM output projection when
// `tied_embeddings` is set.
template <class S>
struct ModelStateT {
  EncoderConfig config;
  Mat<S> embedding;   // V x H
  Mat<S> positional;  // k x H
  Mat<S> emb_ln_gain, emb_ln_bias;
  std::vector<EncoderLayerParams<S>> layers;
  Mat<S> final_ln_gain, final_ln_bias;
  // MLM head: H->H transform + layernorm, then tied projection + bias.
  Mat<S> mlm_w, mlm_b, mlm_ln_gain, mlm_ln_bias, mlm_out_bias;
  Mat<S> mlm_out_w;  // only used when untied
  // RTD head: H->H transform + H->1 projection.
  Mat<S> rtd_w1, rtd_b1, rtd_w2, rtd_b2;

  // Counts every encoder pass made with this state; the single-pass
  // invariant of the trainer is asserted against it.
  mutable std::uint64_t forward_count = 0;

  static ModelStateT init(const EncoderConfig& cfg, std::uint64_t seed);

  std::vector<ParamRef<S>> registry();

  std::int64_t parameter_count() const;

  template <class T>
  ModelStateT<T> cast() const {
    ModelStateT<T> out;
    out.config = config;
    out.layers.resize(layers.size());
    auto src = const_cast<ModelStateT*>(this)->registry();
    auto dst = out.registry();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].mat = src[i].mat->template cast<T>();
    out.forward_count = forward_count;
    return out;
  }
};

using ModelState = ModelStateT<float>;

// Binds parameter matrices to tape leaves on first use, so a forward graph
// only materializes the parameters it touches. Gradients of untouched
// parameters are implicitly zero.
template <class S>
class ParamBinder {
public:
  explicit ParamBinder(Tape<S>& tape) : tape_(&tape) {}

  Value<S> operator()(const Mat<S>& m) {
    auto it = bound_.find(&m);
    if (it != bound_.end()) return it->second;
    Value<S> v = tape_->leaf(m, true);
    bound_.emplace(&m, v);
    return v;
  }

  bool touched(const Mat<S>& m) const { return bound_.count(&m) > 0; }

  // Gradient of a parameter after backward; zeros if the graph never used it.
  Mat<S> grad_of(const Mat<S>& m) const {
    auto it = bound_.find(&m);
    if (it == bound_.end()) return Mat<S>::Zero(m.rows(), m.cols());
    return it->second.grad();
  }

private:
  Tape<S>* tape_;
  std::unordered_map<const Mat<S>*, Value<S>> bound_;
};

// Pre-norm transformer encoder over an augmented token batch. Padded
// positions are excluded from attention normalization; dropout is active
// only in train mode. Returns (batch * seq_len) x hidden states.
template <class S>
Value<S> encoder_forward(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state,
                         const TokenBatch& batch, bool train_mode, Rng* dropout_rng = nullptr);

// Log-probabilities over the vocabulary at the given flat row positions
// (index = instance_in_batch * seq_len + position). No head computation
// happens at any other position.
template <class S>
Value<S> mlm_log_probs(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden,
                       const std::vector<int>& flat_positions);

// Tied projection from already-transformed head outputs to vocabulary
// log-probabilities; exposed so the zero-vector contract is testable.
template <class S>
Value<S> mlm_log_probs_from_transform(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state,
                                      Value<S> transformed);

// RTD logits at all positions, (batch * seq_len) x 1.
template <class S>
Value<S> rtd_logits(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden);

// sigma(logits) at all positions, in (0,1).
template <class S>
Value<S> rtd_probs(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden);

}  // namespace saslm

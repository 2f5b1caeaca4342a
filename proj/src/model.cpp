#include "saslm/model.hpp"

#include <cmath>

namespace saslm {

namespace {

template <class S>
Mat<S> normal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 0.02) {
  Mat<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(rng.normal() * stddev);
  return m;
}

}  // namespace

template <class S>
ModelStateT<S> ModelStateT<S>::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, RngPurpose::Init);
  const int h = cfg.hidden, f = cfg.ffn, v = cfg.vocab_size, k = cfg.seq_len;
  ModelStateT st;
  st.config = cfg;
  st.embedding = normal_init<S>(v, h, rng);
  st.positional = normal_init<S>(k, h, rng);
  st.emb_ln_gain = Mat<S>::Ones(1, h);
  st.emb_ln_bias = Mat<S>::Zero(1, h);
  st.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : st.layers) {
    layer.ln1_gain = Mat<S>::Ones(1, h);
    layer.ln1_bias = Mat<S>::Zero(1, h);
    layer.wq = normal_init<S>(h, h, rng);
    layer.bq = Mat<S>::Zero(1, h);
    layer.wk = normal_init<S>(h, h, rng);
    layer.bk = Mat<S>::Zero(1, h);
    layer.wv = normal_init<S>(h, h, rng);
    layer.bv = Mat<S>::Zero(1, h);
    layer.wo = normal_init<S>(h, h, rng);
    layer.bo = Mat<S>::Zero(1, h);
    layer.ln2_gain = Mat<S>::Ones(1, h);
    layer.ln2_bias = Mat<S>::Zero(1, h);
    layer.wff1 = normal_init<S>(h, f, rng);
    layer.bff1 = Mat<S>::Zero(1, f);
    layer.wff2 = normal_init<S>(f, h, rng);
    layer.bff2 = Mat<S>::Zero(1, h);
  }
  st.final_ln_gain = Mat<S>::Ones(1, h);
  st.final_ln_bias = Mat<S>::Zero(1, h);
  st.mlm_w = normal_init<S>(h, h, rng);
  st.mlm_b = Mat<S>::Zero(1, h);
  st.mlm_ln_gain = Mat<S>::Ones(1, h);
  st.mlm_ln_bias = Mat<S>::Zero(1, h);
  st.mlm_out_bias = Mat<S>::Zero(1, v);
  if (!cfg.tied_embeddings) st.mlm_out_w = normal_init<S>(v, h, rng);
  st.rtd_w1 = normal_init<S>(h, h, rng);
  st.rtd_b1 = Mat<S>::Zero(1, h);
  st.rtd_w2 = normal_init<S>(h, 1, rng);
  st.rtd_b2 = Mat<S>::Zero(1, 1);
  return st;
}

template <class S>
std::vector<ParamRef<S>> ModelStateT<S>::registry() {
  std::vector<ParamRef<S>> out;
  auto put = [&out](const std::string& name, Mat<S>& m, bool decay) {
    out.push_back(ParamRef<S>{name, &m, decay});
  };
  put("embedding", embedding, true);
  put("positional", positional, true);
  put("emb_ln.gain", emb_ln_gain, false);
  put("emb_ln.bias", emb_ln_bias, false);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& la = layers[l];
    std::string p = "layer" + std::to_string(l) + ".";
    put(p + "ln1.gain", la.ln1_gain, false);
    put(p + "ln1.bias", la.ln1_bias, false);
    put(p + "wq", la.wq, true);
    put(p + "bq", la.bq, false);
    put(p + "wk", la.wk, true);
    put(p + "bk", la.bk, false);
    put(p + "wv", la.wv, true);
    put(p + "bv", la.bv, false);
    put(p + "wo", la.wo, true);
    put(p + "bo", la.bo, false);
    put(p + "ln2.gain", la.ln2_gain, false);
    put(p + "ln2.bias", la.ln2_bias, false);
    put(p + "wff1", la.wff1, true);
    put(p + "bff1", la.bff1, false);
    put(p + "wff2", la.wff2, true);
    put(p + "bff2", la.bff2, false);
  }
  put("final_ln.gain", final_ln_gain, false);
  put("final_ln.bias", final_ln_bias, false);
  put("mlm.w", mlm_w, true);
  put("mlm.b", mlm_b, false);
  put("mlm.ln.gain", mlm_ln_gain, false);
  put("mlm.ln.bias", mlm_ln_bias, false);
  put("mlm.out_bias", mlm_out_bias, false);
  if (!config.tied_embeddings) put("mlm.out_w", mlm_out_w, true);
  put("rtd.w1", rtd_w1, true);
  put("rtd.b1", rtd_b1, false);
  put("rtd.w2", rtd_w2, true);
  put("rtd.b2", rtd_b2, false);
  return out;
}

template <class S>
std::int64_t ModelStateT<S>::parameter_count() const {
  std::int64_t n = 0;
  for (auto& ref : const_cast<ModelStateT*>(this)->registry()) n += ref.mat->size();
  return n;
}

template <class S>
Value<S> encoder_forward(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state,
                         const TokenBatch& batch, bool train_mode, Rng* dropout_rng) {
  const EncoderConfig& cfg = state.config;
  const int k = batch.seq_len;
  if (k != cfg.seq_len) throw std::invalid_argument("encoder_forward: batch seq_len does not match config");
  if (batch.ids.size() != static_cast<std::size_t>(batch.batch) * static_cast<std::size_t>(k) ||
      batch.ids.size() != batch.pad_mask.size())
    throw std::invalid_argument("encoder_forward: inconsistent batch layout");
  for (int id : batch.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::invalid_argument("encoder_forward: token id " + std::to_string(id) + " outside vocabulary of size " +
                                  std::to_string(cfg.vocab_size));
  state.forward_count++;

  const double rate = train_mode ? static_cast<double>(cfg.dropout) : 0.0;
  Rng* rng = rate > 0.0 ? dropout_rng : nullptr;
  if (rate > 0.0 && rng == nullptr)
    throw std::invalid_argument("encoder_forward: train mode with dropout needs an rng");

  std::vector<int> pos_idx(batch.ids.size());
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = static_cast<int>(i % static_cast<std::size_t>(k));

  Value<S> x = add(embedding_gather(bind(state.embedding), batch.ids),
                   embedding_gather(bind(state.positional), pos_idx));
  x = layernorm(x, bind(state.emb_ln_gain), bind(state.emb_ln_bias), static_cast<S>(kLayerNormEps));
  if (rng) x = dropout(x, rate, *rng);

  for (const auto& la : state.layers) {
    Value<S> nx = layernorm(x, bind(la.ln1_gain), bind(la.ln1_bias), static_cast<S>(kLayerNormEps));
    Value<S> q = add_rowvec(matmul(nx, bind(la.wq)), bind(la.bq));
    Value<S> kk = add_rowvec(matmul(nx, bind(la.wk)), bind(la.bk));
    Value<S> v = add_rowvec(matmul(nx, bind(la.wv)), bind(la.bv));
    Value<S> att = multihead_attention(q, kk, v, batch.pad_mask, batch.batch, k, cfg.heads, rate, rng);
    att = add_rowvec(matmul(att, bind(la.wo)), bind(la.bo));
    if (rng) att = dropout(att, rate, *rng);
    x = add(x, att);

    Value<S> nx2 = layernorm(x, bind(la.ln2_gain), bind(la.ln2_bias), static_cast<S>(kLayerNormEps));
    Value<S> ff = gelu(add_rowvec(matmul(nx2, bind(la.wff1)), bind(la.bff1)));
    ff = add_rowvec(matmul(ff, bind(la.wff2)), bind(la.bff2));
    if (rng) ff = dropout(ff, rate, *rng);
    x = add(x, ff);
  }
  return layernorm(x, bind(state.final_ln_gain), bind(state.final_ln_bias), static_cast<S>(kLayerNormEps));
}

template <class S>
Value<S> mlm_log_probs_from_transform(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state,
                                      Value<S> transformed) {
  (void)tape;
  const Mat<S>& table = state.config.tied_embeddings ? state.embedding : state.mlm_out_w;
  Value<S> logits = add_rowvec(matmul_nt(transformed, bind(table)), bind(state.mlm_out_bias));
  return log_softmax_rows(logits);
}

template <class S>
Value<S> mlm_log_probs(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden,
                       const std::vector<int>& flat_positions) {
  Value<S> rows = row_gather(hidden, flat_positions);
  Value<S> t = add_rowvec(matmul(rows, bind(state.mlm_w)), bind(state.mlm_b));
  t = gelu(t);
  t = layernorm(t, bind(state.mlm_ln_gain), bind(state.mlm_ln_bias), static_cast<S>(kLayerNormEps));
  return mlm_log_probs_from_transform(tape, bind, state, t);
}

template <class S>
Value<S> rtd_logits(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden) {
  (void)tape;
  Value<S> u = gelu(add_rowvec(matmul(hidden, bind(state.rtd_w1)), bind(state.rtd_b1)));
  return add_rowvec(matmul(u, bind(state.rtd_w2)), bind(state.rtd_b2));
}

template <class S>
Value<S> rtd_probs(Tape<S>& tape, ParamBinder<S>& bind, const ModelStateT<S>& state, Value<S> hidden) {
  return sigmoid(rtd_logits(tape, bind, state, hidden));
}

template struct ModelStateT<float>;
template struct ModelStateT<double>;

template Value<float> encoder_forward(Tape<float>&, ParamBinder<float>&, const ModelStateT<float>&,
                                      const TokenBatch&, bool, Rng*);
template Value<double> encoder_forward(Tape<double>&, ParamBinder<double>&, const ModelStateT<double>&,
                                       const TokenBatch&, bool, Rng*);
template Value<float> mlm_log_probs(Tape<float>&, ParamBinder<float>&, const ModelStateT<float>&, Value<float>,
                                    const std::vector<int>&);
template Value<double> mlm_log_probs(Tape<double>&, ParamBinder<double>&, const ModelStateT<double>&, Value<double>,
                                     const std::vector<int>&);
template Value<float> mlm_log_probs_from_transform(Tape<float>&, ParamBinder<float>&, const ModelStateT<float>&,
                                                   Value<float>);
template Value<double> mlm_log_probs_from_transform(Tape<double>&, ParamBinder<double>&, const ModelStateT<double>&,
                                                    Value<double>);
template Value<float> rtd_logits(Tape<float>&, ParamBinder<float>&, const ModelStateT<float>&, Value<float>);
template Value<double> rtd_logits(Tape<double>&, ParamBinder<double>&, const ModelStateT<double>&, Value<double>);
template Value<float> rtd_probs(Tape<float>&, ParamBinder<float>&, const ModelStateT<float>&, Value<float>);
template Value<double> rtd_probs(Tape<double>&, ParamBinder<double>&, const ModelStateT<double>&, Value<double>);

}  // namespace saslm

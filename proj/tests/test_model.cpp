#include <doctest.h>

#include <cmath>

#include "saslm/model.hpp"
#include "saslm/objective.hpp"

using namespace saslm;

namespace {

EncoderConfig tiny_config(int vocab = 12, int k = 8) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.vocab_size = vocab;
  cfg.seq_len = k;
  cfg.dropout = 0.0f;
  return cfg;
}

TokenBatch toy_batch(const EncoderConfig& cfg, int batch, std::uint64_t seed) {
  Rng rng(seed, RngPurpose::CorpusGen);
  TokenBatch tb;
  tb.batch = batch;
  tb.seq_len = cfg.seq_len;
  for (int b = 0; b < batch; ++b) {
    int real = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.seq_len - 2)));
    for (int i = 0; i < cfg.seq_len; ++i) {
      if (i == 0) {
        tb.ids.push_back(kClsId);
        tb.pad_mask.push_back(1);
      } else if (i < real) {
        tb.ids.push_back(kNumSpecials + static_cast<int>(rng.below(cfg.vocab_size - kNumSpecials)));
        tb.pad_mask.push_back(1);
      } else {
        tb.ids.push_back(kPadId);
        tb.pad_mask.push_back(0);
      }
    }
  }
  return tb;
}

MatF run_eval(const ModelState& st, const TokenBatch& tb) {
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  return encoder_forward(tape, bind, st, tb, false).val();
}

}  // namespace

TEST_CASE("encoder handles an all-padding row and keeps activations finite") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 3);
  TokenBatch tb;
  tb.batch = 1;
  tb.seq_len = cfg.seq_len;
  tb.ids.assign(static_cast<std::size_t>(cfg.seq_len), kPadId);
  tb.ids[0] = kClsId;
  tb.pad_mask.assign(static_cast<std::size_t>(cfg.seq_len), 0);
  tb.pad_mask[0] = 1;
  MatF h = run_eval(st, tb);
  CHECK(h.allFinite());
}

TEST_CASE("padding positions cannot influence real positions") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 3);
  TokenBatch tb = toy_batch(cfg, 3, 5);
  MatF before = run_eval(st, tb);
  st.embedding.row(kPadId).setConstant(9.0f);  // garbage into the pad embedding
  MatF after = run_eval(st, tb);
  for (Eigen::Index r = 0; r < before.rows(); ++r) {
    if (!tb.pad_mask[static_cast<std::size_t>(r)]) continue;
    CHECK((before.row(r) - after.row(r)).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("zeroed output projections make every block an identity") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 7);
  for (auto& la : st.layers) {
    la.wo.setZero();
    la.bo.setZero();
    la.wff2.setZero();
    la.bff2.setZero();
  }
  TokenBatch tb = toy_batch(cfg, 2, 11);
  MatF got = run_eval(st, tb);

  // Expected: the embedding stream passed straight to the final norm.
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  std::vector<int> pos_idx(tb.ids.size());
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = static_cast<int>(i % static_cast<std::size_t>(cfg.seq_len));
  Value<float> x = add(embedding_gather(bind(st.embedding), tb.ids), embedding_gather(bind(st.positional), pos_idx));
  x = layernorm(x, bind(st.emb_ln_gain), bind(st.emb_ln_bias), kLayerNormEps);
  x = layernorm(x, bind(st.final_ln_gain), bind(st.final_ln_bias), kLayerNormEps);
  CHECK((got - x.val()).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("eval-mode forward is bit-identical across runs and counts passes") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 9);
  TokenBatch tb = toy_batch(cfg, 4, 21);
  std::uint64_t before = st.forward_count;
  MatF h1 = run_eval(st, tb);
  MatF h2 = run_eval(st, tb);
  CHECK(st.forward_count == before + 2);
  CHECK((h1 - h2).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 1);
  TokenBatch tb = toy_batch(cfg, 1, 2);
  tb.ids[3] = cfg.vocab_size;
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  CHECK_THROWS_AS(encoder_forward(tape, bind, st, tb, false), std::invalid_argument);
}

TEST_CASE("mlm log-probability rows normalize to 1") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 13);
  TokenBatch tb = toy_batch(cfg, 2, 31);
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Value<float> hidden = encoder_forward(tape, bind, st, tb, false);
  Value<float> logp = mlm_log_probs(tape, bind, st, hidden, {1, 2, cfg.seq_len + 1});
  for (Eigen::Index r = 0; r < logp.rows(); ++r)
    CHECK(logp.val().row(r).cast<double>().array().exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(mlm_log_probs(tape, bind, st, hidden, {2 * cfg.seq_len}), std::invalid_argument);
}

TEST_CASE("a zero transform vector with zero output bias gives the uniform distribution") {
  EncoderConfig cfg = tiny_config(10);
  ModelState st = ModelState::init(cfg, 17);
  st.mlm_out_bias.setZero();
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Value<float> zero_t = tape.constant(MatF::Zero(3, cfg.hidden));
  Value<float> logp = mlm_log_probs_from_transform(tape, bind, st, zero_t);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < cfg.vocab_size; ++c)
      CHECK(logp.val()(r, c) == doctest::Approx(-std::log(10.0)).epsilon(1e-6));
}

// Hand computation recorded to 4 decimals: with e(a) = (1,0), e(b) = (0,1)
// and head output (2,0), p(a) = e^2 / (e^2 + 1) = 0.8808.
TEST_CASE("tied projection matches the two-token hand computation") {
  EncoderConfig cfg = tiny_config();
  cfg.vocab_size = 2;
  cfg.hidden = 2;
  cfg.heads = 1;
  ModelState st = ModelState::init(cfg, 19);
  st.embedding << 1, 0, 0, 1;
  st.mlm_out_bias.setZero();
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  MatF t(1, 2);
  t << 2, 0;
  Value<float> logp = mlm_log_probs_from_transform(tape, bind, st, tape.constant(t));
  CHECK(std::exp(logp.val()(0, 0)) == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("tied embeddings share weights with the MLM projection") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 23);
  MatF transform = MatF::Random(4, cfg.hidden);
  auto logits_of = [&](const ModelState& state) {
    Tape<float> tape;
    ParamBinder<float> bind(tape);
    const MatF& table = state.config.tied_embeddings ? state.embedding : state.mlm_out_w;
    return add_rowvec(matmul_nt(tape.constant(transform), bind(table)), bind(state.mlm_out_bias)).val();
  };
  MatF base = logits_of(st);
  const int token = 5;
  ModelState perturbed = st;
  perturbed.embedding.row(token).array() += 0.5f;
  MatF moved = logits_of(perturbed);
  for (Eigen::Index r = 0; r < base.rows(); ++r) {
    CHECK(std::abs(moved(r, token) - base(r, token)) > 1e-4f);
    for (Eigen::Index c = 0; c < base.cols(); ++c)
      if (c != token) CHECK(moved(r, c) == base(r, c));
  }

  // Untied: the embedding table no longer feeds the projection.
  EncoderConfig untied_cfg = cfg;
  untied_cfg.tied_embeddings = false;
  ModelState untied = ModelState::init(untied_cfg, 23);
  MatF u_base = logits_of(untied);
  untied.embedding.row(token).array() += 0.5f;
  CHECK((logits_of(untied) - u_base).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("zero-initialized RTD projection gives D = 0.5 everywhere") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 29);
  st.rtd_w2.setZero();
  st.rtd_b2.setZero();
  TokenBatch tb = toy_batch(cfg, 2, 41);
  Tape<float> tape;
  ParamBinder<float> bind(tape);
  Value<float> hidden = encoder_forward(tape, bind, st, tb, false);
  Value<float> d = rtd_probs(tape, bind, st, hidden);
  CHECK((d.val().array() - 0.5f).abs().maxCoeff() == 0.0f);
}

TEST_CASE("clamped logits keep probabilities inside (0,1) and the loss finite") {
  Tape<float> tape;
  MatF z(3, 1);
  z << 100.0f, -100.0f, 30.0f;
  Value<float> d = sigmoid(tape.constant(z));
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(d.val()(i, 0) > 0.0f);
    CHECK(d.val()(i, 0) < 1.0f);
  }
  MatF y(3, 1);
  y << 0, 1, 1;  // worst-case labels against saturated logits
  Value<float> loss = bce_with_logits_masked_mean(tape.leaf(z, true), y, {1, 1, 1});
  CHECK(std::isfinite(loss.val()(0, 0)));
}

TEST_CASE("raising one RTD logit raises D only at that position") {
  Tape<float> tape;
  MatF z = MatF::Zero(5, 1);
  Value<float> base = sigmoid(tape.constant(z));
  MatF z2 = z;
  z2(2, 0) += 1.0f;
  Value<float> bumped = sigmoid(tape.constant(z2));
  for (Eigen::Index i = 0; i < 5; ++i) {
    if (i == 2) CHECK(bumped.val()(i, 0) > base.val()(i, 0));
    else CHECK(bumped.val()(i, 0) == base.val()(i, 0));
  }
}

TEST_CASE("head isolation: each loss reaches exactly its own head") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 31);
  TokenBatch tb = toy_batch(cfg, 3, 51);
  std::vector<int> positions{1, 2, cfg.seq_len + 2};
  std::vector<int> targets{5, 6, 7};
  std::vector<std::uint8_t> labels(tb.ids.size(), 1);
  labels[2] = 0;

  auto grads_for = [&](bool with_mlm, bool with_rtd) {
    Tape<float> tape;
    ParamBinder<float> bind(tape);
    Value<float> hidden = encoder_forward(tape, bind, st, tb, false);
    Value<float> loss = tape.scalar_constant(0.0f);
    if (with_mlm) loss = add(loss, mlm_loss(tape, mlm_log_probs(tape, bind, st, hidden, positions), targets));
    if (with_rtd) loss = add(loss, rtd_loss(tape, rtd_logits(tape, bind, st, hidden), labels, tb.pad_mask));
    tape.backward(loss);
    struct Grads {
      float mlm_head, rtd_head, encoder;
    } g;
    g.mlm_head = bind.grad_of(st.mlm_w).cwiseAbs().maxCoeff();
    g.rtd_head = bind.grad_of(st.rtd_w1).cwiseAbs().maxCoeff();
    g.encoder = bind.grad_of(st.layers[0].wq).cwiseAbs().maxCoeff();
    return g;
  };

  auto mlm_only = grads_for(true, false);
  CHECK(mlm_only.mlm_head > 0.0f);
  CHECK(mlm_only.rtd_head == 0.0f);
  CHECK(mlm_only.encoder > 0.0f);

  auto rtd_only = grads_for(false, true);
  CHECK(rtd_only.mlm_head == 0.0f);
  CHECK(rtd_only.rtd_head > 0.0f);
  CHECK(rtd_only.encoder > 0.0f);

  auto both = grads_for(true, true);
  CHECK(both.mlm_head > 0.0f);
  CHECK(both.rtd_head > 0.0f);
  CHECK(both.encoder > 0.0f);
}

TEST_CASE("scalar cast round-trips the full parameter set") {
  EncoderConfig cfg = tiny_config();
  ModelState st = ModelState::init(cfg, 37);
  ModelStateT<double> dbl = st.cast<double>();
  ModelState back = dbl.cast<float>();
  auto a = st.registry();
  auto b = back.registry();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK((*a[i].mat - *b[i].mat).cwiseAbs().maxCoeff() == 0.0f);
  }
}

#include "saslm/flops.hpp"

#include <stdexcept>

namespace saslm {

namespace {

using u64 = std::uint64_t;

u64 matmul_cost(u64 rows, u64 inner, u64 cols) { return 2 * rows * inner * cols; }

// Embedding stage over batch*k tokens. Lookups are charged as dense one-hot
// multiplies against the V x H table (the hardware-agnostic convention this
// kind of budget comparison uses), plus the positional add and layernorm.
u64 embedding_cost(const EncoderConfig& c, u64 batch) {
  u64 n = batch * static_cast<u64>(c.seq_len);
  u64 h = static_cast<u64>(c.hidden);
  u64 v = static_cast<u64>(c.vocab_size);
  return matmul_cost(n, v, h) + n * h + 8 * n * h;
}

// All transformer blocks plus the final norm.
u64 encoder_cost(const EncoderConfig& c, u64 batch) {
  u64 k = static_cast<u64>(c.seq_len);
  u64 h = static_cast<u64>(c.hidden);
  u64 f = static_cast<u64>(c.ffn);
  u64 a = static_cast<u64>(c.heads);
  u64 n = batch * k;
  u64 per_layer = 0;
  per_layer += 8 * n * h;                        // pre-attention norm
  per_layer += 3 * (matmul_cost(n, h, h) + n * h);  // q, k, v projections
  per_layer += matmul_cost(batch * a * k, h / a, k);  // attention scores
  per_layer += batch * a * k * k;                // score scaling
  per_layer += 5 * batch * a * k * k;            // softmax
  per_layer += matmul_cost(batch * a * k, k, h / a);  // context
  per_layer += matmul_cost(n, h, h) + n * h;     // output projection
  per_layer += n * h;                            // residual
  per_layer += 8 * n * h;                        // pre-ffn norm
  per_layer += matmul_cost(n, h, f) + n * f;     // ffn in
  per_layer += 8 * n * f;                        // gelu
  per_layer += matmul_cost(n, f, h) + n * h;     // ffn out
  per_layer += n * h;                            // residual
  return static_cast<u64>(c.layers) * per_layer + 8 * n * h;  // + final norm
}

// Transform + tied projection + log-softmax at p positions total.
u64 mlm_head_cost(const EncoderConfig& c, u64 positions) {
  u64 h = static_cast<u64>(c.hidden);
  u64 v = static_cast<u64>(c.vocab_size);
  u64 cost = matmul_cost(positions, h, h) + positions * h;  // transform
  cost += 8 * positions * h;                                // gelu
  cost += 8 * positions * h;                                // layernorm
  cost += matmul_cost(positions, h, v) + positions * v;     // projection + bias
  cost += 5 * positions * v;                                // log-softmax
  return cost;
}

// Transform + scalar projection + sigmoid at all batch*k positions.
u64 rtd_head_cost(const EncoderConfig& c, u64 batch) {
  u64 n = batch * static_cast<u64>(c.seq_len);
  u64 h = static_cast<u64>(c.hidden);
  return matmul_cost(n, h, h) + n * h + 8 * n * h + matmul_cost(n, h, 1) + n + 4 * n;
}

}  // namespace

EncoderConfig electra_generator_config(const EncoderConfig& d) {
  EncoderConfig g = d;
  g.hidden = std::max(d.heads, d.hidden / 4);
  g.ffn = std::max(1, d.ffn / 4);
  if (g.hidden % g.heads != 0) g.hidden = g.heads * std::max(1, g.hidden / g.heads);
  return g;
}

FlopsBreakdown step_flops(const EncoderConfig& config, Strategy strategy, int batch, int mlm_positions) {
  config.validate();
  if (batch < 1) throw std::invalid_argument("step_flops: batch must be >= 1");
  if (mlm_positions < 0 || mlm_positions >= config.seq_len)
    throw std::invalid_argument("step_flops: mlm_positions out of range");
  const u64 b = static_cast<u64>(batch);
  const u64 p = b * static_cast<u64>(mlm_positions);

  FlopsBreakdown out;
  out.embedding = embedding_cost(config, b);
  out.encoder = encoder_cost(config, b);
  if (strategy == Strategy::ELECTRA_2NET) {
    // Discriminator carries only the RTD head; the generator runs its own
    // encoder and MLM head over the same batch.
    out.rtd_head = rtd_head_cost(config, b);
    EncoderConfig g = electra_generator_config(config);
    out.generator = embedding_cost(g, b) + encoder_cost(g, b) + mlm_head_cost(g, p);
  } else {
    out.mlm_head = mlm_head_cost(config, p);
    if (uses_rtd(strategy)) out.rtd_head = rtd_head_cost(config, b);
  }
  return out;
}

std::uint64_t run_flops(const EncoderConfig& config, Strategy strategy, int batch, int mlm_positions,
                        std::uint64_t steps) {
  return steps * step_flops(config, strategy, batch, mlm_positions).total();
}

}  // namespace saslm

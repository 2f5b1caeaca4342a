#pragma once

#include <cstdint>

#include "saslm/model.hpp"
#include "saslm/strategy.hpp"

namespace saslm {

// Analytic per-step cost model. Counting conventions, applied uniformly:
//   - matmul of (a x b) by (b x c) costs 2abc; bias adds cost one per element
//   - layernorm costs 8 per element, gelu 8, softmax 5, sigmoid 4
//   - embedding lookups are charged as dense one-hot multiplies (2VH per
//     token); replacement-sampling bookkeeping costs zero
//   - backward = 2 x forward
// The MLM head is charged only at the m loss positions per instance; the
// RTD head at all k positions. The two-network baseline adds its generator's
// encoder and MLM head on top of the discriminator.
struct FlopsBreakdown {
  std::uint64_t embedding = 0;
  std::uint64_t encoder = 0;
  std::uint64_t mlm_head = 0;
  std::uint64_t rtd_head = 0;
  std::uint64_t generator = 0;

  std::uint64_t forward() const { return embedding + encoder + mlm_head + rtd_head + generator; }
  std::uint64_t backward() const { return 2 * forward(); }
  std::uint64_t total() const { return forward() + backward(); }
};

// Generator shape used by the two-network baseline: same depth, hidden and
// ffn at one quarter of the discriminator's.
EncoderConfig electra_generator_config(const EncoderConfig& discriminator);

// Per-step cost for one optimizer step on `batch` instances with m = |S|
// replaced positions per instance.
FlopsBreakdown step_flops(const EncoderConfig& config, Strategy strategy, int batch, int mlm_positions);

// steps x step_flops(...).total()
std::uint64_t run_flops(const EncoderConfig& config, Strategy strategy, int batch, int mlm_positions,
                        std::uint64_t steps);

}  // namespace saslm

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saslm/corpus.hpp"
#include "saslm/model.hpp"
#include "saslm/rng.hpp"
#include "saslm/tape.hpp"

namespace saslm {

// Sorted distinct replacement positions for one instance in one epoch.
// |indices| = ceil(0.15 * k_eff) over the selectable (non-pad, non-[CLS])
// positions; redrawn fresh every epoch.
struct PositionSet {
  std::int64_t instance_id = 0;
  int epoch = 0;
  std::vector<int> indices;
};

// Deterministic given (instance_id, epoch, seed); uniform without
// replacement over selectable positions. Throws when nothing is selectable.
PositionSet select_positions(const TokenSequence& seq, int epoch, std::uint64_t seed);

enum class ColdStartMode { Unigram, Uniform };

// i.i.d. draws over non-special tokens from the unigram table (probabilities
// over the full id range, zero at specials) or the uniform distribution.
std::vector<int> cold_start_sample(const std::vector<double>& unigram, ColdStartMode mode, int n, Rng& rng);

// One categorical draw from a generator's log-probability row, restricted to
// tokens that may legally appear in an augmented sequence ([PAD], [CLS] and
// [MASK] are excluded and the remaining mass renormalized).
int sample_replacement(const float* log_probs, int vocab_size, Rng& rng);

// Augmented view of one instance: x-tilde plus per-position labels
// y_j = 1 iff x-tilde_j == x_j (so a sampled token that coincides with the
// original counts as unreplaced).
struct AugmentedInstance {
  std::vector<int> augmented_ids;
  std::vector<std::uint8_t> labels;
};

// Applies replacements at `positions`; every other position keeps the
// original token. [PAD] and [CLS] are rejected as replacements; [MASK] is
// allowed (the mask-based baseline routes through here).
AugmentedInstance apply_augmentation(const TokenSequence& seq, const std::vector<int>& positions,
                                     const std::vector<int>& replacements, int vocab_size);

// Sampled token indices produced in one epoch for consumption in the next.
// Token ids only; distributions are never stored.
struct CacheEntry {
  int epoch_produced = 0;
  std::vector<int> positions;
  std::vector<int> token_ids;
};

// Cross-epoch replacement store. Within an epoch, entries for the next
// epoch are written exactly once per instance and current-epoch entries are
// consumed (removed) exactly once; the trainer's epoch barrier separates the
// two roles.
class ReplacementCache {
public:
  void store(std::int64_t instance_id, CacheEntry entry);
  // Removes and returns the entry; throws on a miss or epoch mismatch.
  CacheEntry consume(std::int64_t instance_id, int expected_epoch_produced);
  // Non-destructive lookup (nullptr when absent).
  const CacheEntry* peek(std::int64_t instance_id) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::map<std::int64_t, CacheEntry>& entries() const { return entries_; }

  // Spill format: per entry, little-endian u32 fields
  // (instance_id, |S|, positions..., token_ids...).
  void save(const std::string& path) const;
  static ReplacementCache load(const std::string& path, int epoch_produced);

  // Order-independent content hash used by replay-identity checks.
  std::uint64_t content_hash() const;

private:
  std::map<std::int64_t, CacheEntry> entries_;
};

// A fully prepared training batch: originals, augmented inputs, per-instance
// position sets and flat RTD labels.
struct AugmentedBatch {
  std::vector<std::int64_t> instance_ids;
  TokenBatch original;
  TokenBatch augmented;
  std::vector<std::vector<int>> positions;   // seq-local, per instance
  std::vector<std::uint8_t> labels;          // flat (batch * seq_len)
};

// Assembles the flat batch tensors from per-instance pieces.
AugmentedBatch make_augmented_batch(const std::vector<const TokenSequence*>& seqs,
                                    const std::vector<PositionSet>& position_sets,
                                    const std::vector<std::vector<int>>& replacements, int vocab_size);

}  // namespace saslm

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saslm/augment.hpp"
#include "saslm/model.hpp"
#include "saslm/strategy.hpp"

namespace saslm {

// Everything needed to continue a run at an epoch boundary: the model (and
// generator network, when present), optimizer moments over the concatenated
// parameter registry, progress counters and the replacement cache produced
// by the last completed epoch. Round-trips byte-exactly.
struct TrainCheckpoint {
  EncoderConfig encoder;
  Strategy strategy = Strategy::SAS;
  std::uint64_t root_seed = 0;
  int epochs_completed = 0;
  std::uint64_t step = 0;
  std::uint64_t forward_count = 0;
  std::uint64_t cumulative_flops = 0;
  std::uint64_t adam_t = 0;

  ModelState model;
  std::optional<ModelState> generator;

  // Moments aligned with model.registry() followed by generator->registry().
  std::vector<MatF> adam_m, adam_v;

  // Replacements sampled during the last completed epoch (consumed by the
  // next); empty for strategies without self-augmentation.
  ReplacementCache cache;
  int cache_epoch_produced = -1;
};

void save_checkpoint(const TrainCheckpoint& ckpt, const std::string& path);

// Throws on version mismatch, truncation or checksum failure; never returns
// partial state.
TrainCheckpoint load_checkpoint(const std::string& path);

}  // namespace saslm

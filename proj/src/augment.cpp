#include "saslm/augment.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace saslm {

PositionSet select_positions(const TokenSequence& seq, int epoch, std::uint64_t seed) {
  std::vector<int> selectable;
  selectable.reserve(seq.ids.size());
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (seq.pad_mask[i] && seq.ids[i] != kClsId) selectable.push_back(static_cast<int>(i));
  if (selectable.empty())
    throw std::runtime_error("select_positions: instance " + std::to_string(seq.instance_id) +
                             " has no selectable positions");
  const int m = static_cast<int>(std::ceil(kMaskPercent * static_cast<double>(selectable.size())));
  Rng rng(seed, RngPurpose::SelectPositions, static_cast<std::uint64_t>(seq.instance_id),
          static_cast<std::uint64_t>(epoch));
  PositionSet out;
  out.instance_id = seq.instance_id;
  out.epoch = epoch;
  for (int j : rng.sample_without_replacement(static_cast<int>(selectable.size()), m))
    out.indices.push_back(selectable[static_cast<std::size_t>(j)]);
  return out;
}

std::vector<int> cold_start_sample(const std::vector<double>& unigram, ColdStartMode mode, int n, Rng& rng) {
  if (static_cast<int>(unigram.size()) <= kNumSpecials)
    throw std::invalid_argument("cold_start_sample: vocabulary has no non-special tokens");
  std::vector<int> out(static_cast<std::size_t>(n));
  if (mode == ColdStartMode::Uniform) {
    const int words = static_cast<int>(unigram.size()) - kNumSpecials;
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = kNumSpecials + static_cast<int>(rng.below(words));
    return out;
  }
  double total = 0.0;
  for (std::size_t i = kNumSpecials; i < unigram.size(); ++i) total += unigram[i];
  if (total <= 0.0) throw std::runtime_error("cold_start_sample: all-zero unigram table");
  for (int i = 0; i < n; ++i) {
    double r = rng.unit() * total;
    double acc = 0.0;
    int pick = -1;
    for (std::size_t t = kNumSpecials; t < unigram.size(); ++t) {
      if (unigram[t] <= 0.0) continue;
      acc += unigram[t];
      pick = static_cast<int>(t);
      if (r < acc) break;
    }
    out[static_cast<std::size_t>(i)] = pick;
  }
  return out;
}

int sample_replacement(const float* log_probs, int vocab_size, Rng& rng) {
  double total = 0.0;
  double r = rng.unit();
  // two passes: renormalize over the allowed support, then CDF scan
  for (int t = 0; t < vocab_size; ++t) {
    if (t == kPadId || t == kClsId || t == kMaskId) continue;
    total += std::exp(static_cast<double>(log_probs[t]));
  }
  if (total <= 0.0) throw std::runtime_error("sample_replacement: zero mass on allowed tokens");
  double acc = 0.0;
  int pick = -1;
  for (int t = 0; t < vocab_size; ++t) {
    if (t == kPadId || t == kClsId || t == kMaskId) continue;
    double p = std::exp(static_cast<double>(log_probs[t])) / total;
    if (p <= 0.0) continue;
    acc += p;
    pick = t;
    if (r < acc) break;
  }
  return pick;
}

AugmentedInstance apply_augmentation(const TokenSequence& seq, const std::vector<int>& positions,
                                     const std::vector<int>& replacements, int vocab_size) {
  if (positions.size() != replacements.size())
    throw std::invalid_argument("apply_augmentation: positions and replacements differ in length");
  AugmentedInstance out;
  out.augmented_ids = seq.ids;
  for (std::size_t j = 0; j < positions.size(); ++j) {
    const int pos = positions[j];
    const int rep = replacements[j];
    if (pos < 0 || pos >= seq.length() || !seq.pad_mask[static_cast<std::size_t>(pos)] ||
        seq.ids[static_cast<std::size_t>(pos)] == kClsId)
      throw std::invalid_argument("apply_augmentation: position " + std::to_string(pos) + " is not selectable");
    if (rep < 0 || rep >= vocab_size)
      throw std::invalid_argument("apply_augmentation: replacement id " + std::to_string(rep) +
                                  " outside vocabulary of size " + std::to_string(vocab_size));
    if (rep == kPadId || rep == kClsId)
      throw std::invalid_argument("apply_augmentation: special id " + std::to_string(rep) +
                                  " may not be a replacement");
    out.augmented_ids[static_cast<std::size_t>(pos)] = rep;
  }
  out.labels.resize(seq.ids.size());
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    out.labels[i] = out.augmented_ids[i] == seq.ids[i] ? 1 : 0;
  return out;
}

void ReplacementCache::store(std::int64_t instance_id, CacheEntry entry) {
  if (entry.positions.size() != entry.token_ids.size())
    throw std::invalid_argument("ReplacementCache::store: positions and token_ids differ in length");
  auto it = entries_.find(instance_id);
  if (it != entries_.end()) {
    if (it->second.epoch_produced == entry.epoch_produced)
      throw std::runtime_error("ReplacementCache: double write for instance " + std::to_string(instance_id) +
                               " in epoch " + std::to_string(entry.epoch_produced));
    throw std::runtime_error("ReplacementCache: store over unconsumed entry for instance " +
                             std::to_string(instance_id));
  }
  entries_.emplace(instance_id, std::move(entry));
}

CacheEntry ReplacementCache::consume(std::int64_t instance_id, int expected_epoch_produced) {
  auto it = entries_.find(instance_id);
  if (it == entries_.end())
    throw std::runtime_error("ReplacementCache: miss for instance " + std::to_string(instance_id) +
                             " (expected entry from epoch " + std::to_string(expected_epoch_produced) + ")");
  if (it->second.epoch_produced != expected_epoch_produced)
    throw std::runtime_error("ReplacementCache: entry for instance " + std::to_string(instance_id) +
                             " was produced in epoch " + std::to_string(it->second.epoch_produced) +
                             ", expected " + std::to_string(expected_epoch_produced));
  CacheEntry out = std::move(it->second);
  entries_.erase(it);
  return out;
}

const CacheEntry* ReplacementCache::peek(std::int64_t instance_id) const {
  auto it = entries_.find(instance_id);
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {
void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
bool get_u32(std::ifstream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}
}  // namespace

void ReplacementCache::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write cache file: " + path);
  for (const auto& [id, e] : entries_) {
    put_u32(out, static_cast<std::uint32_t>(id));
    put_u32(out, static_cast<std::uint32_t>(e.positions.size()));
    for (int p : e.positions) put_u32(out, static_cast<std::uint32_t>(p));
    for (int t : e.token_ids) put_u32(out, static_cast<std::uint32_t>(t));
  }
}

ReplacementCache ReplacementCache::load(const std::string& path, int epoch_produced) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read cache file: " + path);
  ReplacementCache cache;
  std::uint32_t id = 0;
  while (get_u32(in, id)) {
    std::uint32_t n = 0;
    if (!get_u32(in, n)) throw std::runtime_error("truncated cache file: " + path);
    CacheEntry e;
    e.epoch_produced = epoch_produced;
    e.positions.resize(n);
    e.token_ids.resize(n);
    std::uint32_t v = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!get_u32(in, v)) throw std::runtime_error("truncated cache file: " + path);
      e.positions[i] = static_cast<int>(v);
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!get_u32(in, v)) throw std::runtime_error("truncated cache file: " + path);
      e.token_ids[i] = static_cast<int>(v);
    }
    cache.entries_.emplace(static_cast<std::int64_t>(id), std::move(e));
  }
  return cache;
}

std::uint64_t ReplacementCache::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [id, e] : entries_) {
    h = fnv1a64(&id, sizeof(id), h);
    std::uint32_t n = static_cast<std::uint32_t>(e.positions.size());
    h = fnv1a64(&n, sizeof(n), h);
    h = fnv1a64(e.positions.data(), e.positions.size() * sizeof(int), h);
    h = fnv1a64(e.token_ids.data(), e.token_ids.size() * sizeof(int), h);
  }
  return h;
}

AugmentedBatch make_augmented_batch(const std::vector<const TokenSequence*>& seqs,
                                    const std::vector<PositionSet>& position_sets,
                                    const std::vector<std::vector<int>>& replacements, int vocab_size) {
  if (seqs.empty()) throw std::invalid_argument("make_augmented_batch: empty batch");
  if (position_sets.size() != seqs.size() || replacements.size() != seqs.size())
    throw std::invalid_argument("make_augmented_batch: per-instance inputs differ in length");
  const int k = seqs.front()->length();
  AugmentedBatch b;
  b.original.batch = b.augmented.batch = static_cast<int>(seqs.size());
  b.original.seq_len = b.augmented.seq_len = k;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const TokenSequence& seq = *seqs[i];
    if (seq.length() != k) throw std::invalid_argument("make_augmented_batch: mixed sequence lengths");
    AugmentedInstance aug = apply_augmentation(seq, position_sets[i].indices, replacements[i], vocab_size);
    b.instance_ids.push_back(seq.instance_id);
    b.positions.push_back(position_sets[i].indices);
    b.original.ids.insert(b.original.ids.end(), seq.ids.begin(), seq.ids.end());
    b.original.pad_mask.insert(b.original.pad_mask.end(), seq.pad_mask.begin(), seq.pad_mask.end());
    b.augmented.ids.insert(b.augmented.ids.end(), aug.augmented_ids.begin(), aug.augmented_ids.end());
    b.augmented.pad_mask.insert(b.augmented.pad_mask.end(), seq.pad_mask.begin(), seq.pad_mask.end());
    b.labels.insert(b.labels.end(), aug.labels.begin(), aug.labels.end());
  }
  return b;
}

}  // namespace saslm

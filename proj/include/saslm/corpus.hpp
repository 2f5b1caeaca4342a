#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "saslm/rng.hpp"

namespace saslm {

// The four reserved ids at the head of every vocabulary.
enum SpecialId : int { kPadId = 0, kUnkId = 1, kMaskId = 2, kClsId = 3, kNumSpecials = 4 };

// Token <-> id map plus per-token corpus frequencies. Ids are dense,
// specials first; counts of specials are zero by construction. The
// normalized counts over non-special tokens are the cold-start unigram
// distribution.
class Vocab {
public:
  Vocab() = default;

  // Whitespace-split, lowercased. Keeps the (max_size - 4) most frequent
  // tokens, ties broken lexicographically. Throws on an empty stream.
  static Vocab build(const std::vector<std::string>& texts, int max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }

  // Id for a surface token, or [UNK] when unknown.
  int id_or_unk(std::string_view token) const;
  // Id for a surface token; -1 when unknown.
  int lookup(std::string_view token) const;

  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // Unigram probabilities over the full id range: zero for specials,
  // counts normalized over non-special tokens elsewhere.
  std::vector<double> unigram() const;

  // One token per line, line number = id, specials first.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  // Vocab files carry tokens only; frequencies are re-derived from a corpus.
  void recount(const std::vector<std::string>& texts);

private:
  void index_tokens();

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

// Fixed-length encoded instance. `pad_mask[i]` is true for [CLS] and real
// word tokens, false for the padded tail. Raw corpus sequences never
// contain [MASK].
struct TokenSequence {
  std::int64_t instance_id = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> pad_mask;

  int length() const { return static_cast<int>(ids.size()); }
  // Positions eligible for replacement: non-pad, non-[CLS].
  int selectable_count() const;
};

// Lowercase a whole line in place (ASCII).
std::string lowercase(std::string_view s);

// Split on whitespace after lowercasing.
std::vector<std::string> split_tokens(std::string_view text);

// [CLS] + word ids, truncated or [PAD]-padded to exactly k (k >= 2).
TokenSequence encode(std::string_view text, const Vocab& vocab, int k, std::int64_t instance_id);

// Surface strings of the non-pad word tokens (drops [CLS], keeps [UNK] text).
std::vector<std::string> decode(const TokenSequence& seq, const Vocab& vocab);

// One document per line, UTF-8. Throws on unreadable files.
std::vector<std::string> read_lines(const std::string& path);

// In-memory sequence store with stable instance ids (line order).
class SequenceStore {
public:
  SequenceStore() = default;
  SequenceStore(const std::vector<std::string>& lines, const Vocab& vocab, int k);

  std::size_t size() const { return seqs_.size(); }
  const TokenSequence& at(std::size_t i) const { return seqs_.at(i); }

private:
  std::vector<TokenSequence> seqs_;
};

// Epoch-dependent deterministic shuffle; every instance exactly once per
// epoch; the last partial batch is emitted.
class BatchIter {
public:
  BatchIter(const SequenceStore& store, int batch_size, int epoch, std::uint64_t seed);

  // Returns indices of the next batch, empty when the epoch is exhausted.
  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const;

private:
  const SequenceStore& store_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int batch_size_;
};

}  // namespace saslm

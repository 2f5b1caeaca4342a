#include "saslm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace saslm {

namespace {
const char* kSpecialNames[kNumSpecials] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]"};
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string lowered = lowercase(text);
  std::istringstream iss(lowered);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

void Vocab::index_tokens() {
  ids_.clear();
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

Vocab Vocab::build(const std::vector<std::string>& texts, int max_size) {
  if (max_size < kNumSpecials + 1) throw std::invalid_argument("Vocab::build: max_size must be >= 5");
  std::unordered_map<std::string, std::int64_t> freq;
  std::int64_t total = 0;
  for (const auto& line : texts) {
    for (auto& tok : split_tokens(line)) {
      ++freq[tok];
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> by_freq(freq.begin(), freq.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::size_t keep = std::min(by_freq.size(), static_cast<std::size_t>(max_size - kNumSpecials));

  Vocab v;
  v.tokens_.assign(kSpecialNames, kSpecialNames + kNumSpecials);
  v.counts_.assign(kNumSpecials, 0);
  for (std::size_t i = 0; i < keep; ++i) {
    v.tokens_.push_back(by_freq[i].first);
    v.counts_.push_back(by_freq[i].second);
  }
  v.index_tokens();
  return v;
}

int Vocab::lookup(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

int Vocab::id_or_unk(std::string_view token) const {
  int id = lookup(token);
  return id < 0 ? kUnkId : id;
}

std::vector<double> Vocab::unigram() const {
  std::vector<double> p(tokens_.size(), 0.0);
  std::int64_t total = std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
  if (total > 0) {
    for (std::size_t i = kNumSpecials; i < counts_.size(); ++i)
      p[i] = static_cast<double>(counts_[i]) / static_cast<double>(total);
  }
  return p;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.tokens_.push_back(line);
  }
  if (v.tokens_.size() < kNumSpecials) throw std::runtime_error("vocab file too short: " + path);
  for (int i = 0; i < kNumSpecials; ++i) {
    if (v.tokens_[static_cast<std::size_t>(i)] != kSpecialNames[i])
      throw std::runtime_error("vocab file missing special tokens: " + path);
  }
  v.counts_.assign(v.tokens_.size(), 0);
  v.index_tokens();
  return v;
}

void Vocab::recount(const std::vector<std::string>& texts) {
  std::fill(counts_.begin(), counts_.end(), std::int64_t{0});
  for (const auto& line : texts) {
    for (auto& tok : split_tokens(line)) {
      int id = lookup(tok);
      if (id >= kNumSpecials) ++counts_[static_cast<std::size_t>(id)];
    }
  }
}

int TokenSequence::selectable_count() const {
  int n = 0;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (pad_mask[i] && ids[i] != kClsId) ++n;
  return n;
}

TokenSequence encode(std::string_view text, const Vocab& vocab, int k, std::int64_t instance_id) {
  if (k < 2) throw std::invalid_argument("encode: k must be >= 2");
  TokenSequence seq;
  seq.instance_id = instance_id;
  seq.ids.reserve(static_cast<std::size_t>(k));
  seq.pad_mask.reserve(static_cast<std::size_t>(k));
  seq.ids.push_back(kClsId);
  seq.pad_mask.push_back(1);
  for (auto& tok : split_tokens(text)) {
    if (static_cast<int>(seq.ids.size()) >= k) break;
    seq.ids.push_back(vocab.id_or_unk(tok));
    seq.pad_mask.push_back(1);
  }
  while (static_cast<int>(seq.ids.size()) < k) {
    seq.ids.push_back(kPadId);
    seq.pad_mask.push_back(0);
  }
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocab& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.pad_mask[i] || seq.ids[i] == kClsId) continue;
    out.push_back(vocab.token(seq.ids[i]));
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

SequenceStore::SequenceStore(const std::vector<std::string>& lines, const Vocab& vocab, int k) {
  seqs_.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i)
    seqs_.push_back(encode(lines[i], vocab, k, static_cast<std::int64_t>(i)));
}

BatchIter::BatchIter(const SequenceStore& store, int batch_size, int epoch, std::uint64_t seed)
    : store_(store), batch_size_(batch_size) {
  if (batch_size < 1) throw std::invalid_argument("BatchIter: batch_size must be >= 1");
  if (store.size() == 0) throw std::runtime_error("BatchIter: empty corpus");
  order_.resize(store.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(seed, RngPurpose::Shuffle, static_cast<std::uint64_t>(epoch));
  rng.shuffle(order_);
}

std::vector<std::size_t> BatchIter::next() {
  std::vector<std::size_t> batch;
  while (cursor_ < order_.size() && static_cast<int>(batch.size()) < batch_size_)
    batch.push_back(order_[cursor_++]);
  return batch;
}

std::size_t BatchIter::batches_per_epoch() const {
  return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

}  // namespace saslm

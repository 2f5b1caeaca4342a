#include <doctest.h>

#include <cmath>
#include <set>

#include "saslm/augment.hpp"
#include "test_util.hpp"

using namespace saslm;

namespace {

TokenSequence seq_with_keff(int k_eff, std::int64_t instance = 0) {
  TokenSequence s;
  s.instance_id = instance;
  s.ids.push_back(kClsId);
  s.pad_mask.push_back(1);
  for (int i = 0; i < k_eff; ++i) {
    s.ids.push_back(kNumSpecials + (i % 6));
    s.pad_mask.push_back(1);
  }
  return s;
}

}  // namespace

TEST_CASE("position budget is ceil(0.15 * k_eff) over selectable positions") {
  CHECK(select_positions(seq_with_keff(128), 0, 1).indices.size() == 20);
  CHECK(select_positions(seq_with_keff(10), 0, 1).indices.size() == 2);
  CHECK(select_positions(seq_with_keff(7), 0, 1).indices.size() == 2);  // ceil(1.05) = 2
  auto single = select_positions(seq_with_keff(1), 0, 1);
  CHECK(single.indices == std::vector<int>{1});
}

TEST_CASE("selected positions are sorted, distinct, selectable, and epoch-fresh") {
  TokenSequence s = seq_with_keff(40, 9);
  s.ids.push_back(kPadId);
  s.pad_mask.push_back(0);
  auto a = select_positions(s, 3, 77);
  auto b = select_positions(s, 3, 77);
  CHECK(a.indices == b.indices);  // deterministic per (instance, epoch, seed)
  auto c = select_positions(s, 4, 77);
  CHECK(a.indices != c.indices);
  std::set<int> uniq(a.indices.begin(), a.indices.end());
  CHECK(uniq.size() == a.indices.size());
  for (int p : a.indices) {
    CHECK(p >= 1);
    CHECK(p <= 40);  // never [CLS] at 0, never the padded tail
    CHECK(std::is_sorted(a.indices.begin(), a.indices.end()));
  }
}

TEST_CASE("selection rejects instances with no selectable positions") {
  TokenSequence s;
  s.instance_id = 4;
  s.ids = {kClsId, kPadId};
  s.pad_mask = {1, 0};
  CHECK_THROWS_AS(select_positions(s, 0, 1), std::runtime_error);
}

TEST_CASE("each position is selected at close to the 15 percent rate") {
  TokenSequence s = seq_with_keff(20, 123);
  std::vector<int> hits(21, 0);
  const int draws = 100000;
  for (int e = 0; e < draws; ++e)
    for (int p : select_positions(s, e, 5).indices) ++hits[static_cast<std::size_t>(p)];
  for (int p = 1; p <= 20; ++p) {
    double freq = static_cast<double>(hits[static_cast<std::size_t>(p)]) / draws;
    CHECK(std::abs(freq - 0.15) < 0.01);  // analytic rate is m / k_eff = 3/20
  }
}

TEST_CASE("cold start sampling follows the requested law") {
  SUBCASE("single-token table always yields that token") {
    std::vector<double> table(kNumSpecials + 3, 0.0);
    table[5] = 1.0;
    Rng rng(1, RngPurpose::ColdStart, 0, 0);
    for (int id : cold_start_sample(table, ColdStartMode::Unigram, 50, rng)) CHECK(id == 5);
  }
  SUBCASE("uniform over 8 tokens hits each at 0.125 +- 0.01") {
    std::vector<double> table(kNumSpecials + 8, 0.0);
    Rng rng(2, RngPurpose::ColdStart, 0, 0);
    auto ids = cold_start_sample(table, ColdStartMode::Uniform, 80000, rng);
    std::vector<int> counts(8, 0);
    for (int id : ids) ++counts[static_cast<std::size_t>(id - kNumSpecials)];
    for (int c : counts) CHECK(std::abs(c / 80000.0 - 0.125) < 0.01);
  }
  SUBCASE("unigram (0.5, 0.3, 0.2) empirical TV distance below 0.01") {
    std::vector<double> table(kNumSpecials + 3, 0.0);
    table[4] = 0.5;
    table[5] = 0.3;
    table[6] = 0.2;
    Rng rng(3, RngPurpose::ColdStart, 0, 0);
    auto ids = cold_start_sample(table, ColdStartMode::Unigram, 100000, rng);
    std::vector<double> freq(3, 0.0);
    for (int id : ids) freq[static_cast<std::size_t>(id - kNumSpecials)] += 1e-5;
    double tv = 0.5 * (std::abs(freq[0] - 0.5) + std::abs(freq[1] - 0.3) + std::abs(freq[2] - 0.2));
    CHECK(tv < 0.01);
  }
  SUBCASE("an all-zero table is an error") {
    std::vector<double> table(kNumSpecials + 3, 0.0);
    Rng rng(4, RngPurpose::ColdStart, 0, 0);
    CHECK_THROWS_AS(cold_start_sample(table, ColdStartMode::Unigram, 1, rng), std::runtime_error);
  }
}

TEST_CASE("replacement sampling follows the generator distribution and skips specials") {
  SUBCASE("a one-hot distribution is sampled with certainty") {
    const int v = kNumSpecials + 2;
    std::vector<float> logp(static_cast<std::size_t>(v), -40.0f);
    logp[5] = 0.0f;
    Rng rng(5, RngPurpose::SampleNext, 0, 0);
    for (int i = 0; i < 100; ++i) CHECK(sample_replacement(logp.data(), v, rng) == 5);
  }
  SUBCASE("a 0.9/0.1 split is hit at 0.9 +- 0.02 over 1e4 draws") {
    const int v = kNumSpecials + 2;
    std::vector<float> logp(static_cast<std::size_t>(v), -100.0f);
    logp[4] = std::log(0.9f);
    logp[5] = std::log(0.1f);
    Rng rng(6, RngPurpose::SampleNext, 0, 0);
    int first = 0;
    for (int i = 0; i < 10000; ++i)
      if (sample_replacement(logp.data(), v, rng) == 4) ++first;
    CHECK(std::abs(first / 10000.0 - 0.9) < 0.02);
  }
  SUBCASE("mass on PAD, CLS or MASK is renormalized away") {
    const int v = kNumSpecials + 2;
    std::vector<float> logp(static_cast<std::size_t>(v), -40.0f);
    logp[kPadId] = 10.0f;
    logp[kClsId] = 10.0f;
    logp[kMaskId] = 10.0f;
    logp[kUnkId] = 0.0f;
    logp[4] = 0.0f;
    Rng rng(7, RngPurpose::SampleNext, 0, 0);
    for (int i = 0; i < 200; ++i) {
      int id = sample_replacement(logp.data(), v, rng);
      CHECK((id == kUnkId || id == 4));
    }
  }
}

TEST_CASE("apply_augmentation matches the worked examples") {
  TokenSequence s;
  s.instance_id = 0;
  s.ids = {kClsId, 5, 7, 9};
  s.pad_mask = {1, 1, 1, 1};
  const int vocab = 12;

  SUBCASE("a sampled token equal to the original leaves labels at 1") {
    AugmentedInstance out = apply_augmentation(s, {2}, {7}, vocab);
    CHECK(out.augmented_ids == s.ids);
    CHECK(out.labels == std::vector<std::uint8_t>{1, 1, 1, 1});
  }
  SUBCASE("replacements flip exactly the changed labels") {
    AugmentedInstance out = apply_augmentation(s, {1, 3}, {6, 2}, vocab);
    CHECK(out.augmented_ids == std::vector<int>{kClsId, 6, 7, 2});
    CHECK(out.labels == std::vector<std::uint8_t>{1, 0, 1, 0});
  }
  SUBCASE("an empty position set is the identity with labels all 1") {
    AugmentedInstance out = apply_augmentation(s, {}, {}, vocab);
    CHECK(out.augmented_ids == s.ids);
    CHECK(out.labels == std::vector<std::uint8_t>{1, 1, 1, 1});
  }
  SUBCASE("replacement ids outside the vocabulary are rejected") {
    CHECK_THROWS_AS(apply_augmentation(s, {1}, {vocab}, vocab), std::invalid_argument);
  }
  SUBCASE("PAD and CLS can never be replacements") {
    CHECK_THROWS_AS(apply_augmentation(s, {1}, {kPadId}, vocab), std::invalid_argument);
    CHECK_THROWS_AS(apply_augmentation(s, {1}, {kClsId}, vocab), std::invalid_argument);
  }
  SUBCASE("positions must be selectable") {
    CHECK_THROWS_AS(apply_augmentation(s, {0}, {5}, vocab), std::invalid_argument);  // [CLS]
    TokenSequence padded = s;
    padded.ids.push_back(kPadId);
    padded.pad_mask.push_back(0);
    CHECK_THROWS_AS(apply_augmentation(padded, {4}, {5}, vocab), std::invalid_argument);
  }
}

TEST_CASE("replacement cache stores once and is consumed once") {
  ReplacementCache cache;
  cache.store(7, CacheEntry{2, {1, 4}, {8, 9}});
  CHECK(cache.size() == 1);
  SUBCASE("round trip returns identical content") {
    CacheEntry e = cache.consume(7, 2);
    CHECK(e.positions == std::vector<int>{1, 4});
    CHECK(e.token_ids == std::vector<int>{8, 9});
    CHECK(cache.empty());
  }
  SUBCASE("a second write for the same epoch is a double write") {
    CHECK_THROWS_WITH_AS(cache.store(7, CacheEntry{2, {2}, {5}}),
                         "ReplacementCache: double write for instance 7 in epoch 2", std::runtime_error);
  }
  SUBCASE("a miss and an epoch mismatch are distinct errors") {
    CHECK_THROWS_AS(cache.consume(8, 2), std::runtime_error);
    CHECK_THROWS_AS(cache.consume(7, 3), std::runtime_error);
  }
}

TEST_CASE("cache spill file round-trips through the documented u32 layout") {
  saslm::testutil::TempDir tmp("cache");
  ReplacementCache cache;
  cache.store(3, CacheEntry{1, {2, 5, 9}, {14, 6, 6}});
  cache.store(11, CacheEntry{1, {1}, {4}});
  cache.save(tmp.path("cache.bin"));

  // Independent decode of the raw bytes.
  std::string bytes = saslm::testutil::slurp(tmp.path("cache.bin"));
  REQUIRE(bytes.size() == (2 + 3 + 3 + 2 + 1 + 1) * 4);
  auto u32_at = [&bytes](std::size_t idx) {
    std::size_t o = idx * 4;
    return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 3])) << 24);
  };
  CHECK(u32_at(0) == 3);   // instance
  CHECK(u32_at(1) == 3);   // |S|
  CHECK(u32_at(2) == 2);   // positions...
  CHECK(u32_at(5) == 14);  // ids...
  CHECK(u32_at(8) == 11);  // next instance

  ReplacementCache loaded = ReplacementCache::load(tmp.path("cache.bin"), 1);
  CHECK(loaded.content_hash() == cache.content_hash());
  CacheEntry e = loaded.consume(3, 1);
  CHECK(e.positions == std::vector<int>{2, 5, 9});
  CHECK(e.token_ids == std::vector<int>{14, 6, 6});
}

TEST_CASE("augmented batches satisfy the label identity and never touch CLS or PAD") {
  auto lines = saslm::testutil::toy_lines(64, 12, 1, 20, 7);
  Vocab vocab = Vocab::build(lines, 40);
  SequenceStore store(lines, vocab, 16);
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::vector<const TokenSequence*> seqs;
    std::vector<PositionSet> pos;
    std::vector<std::vector<int>> repl;
    Rng rng(5, RngPurpose::ColdStart, 99, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = 0; i < store.size(); ++i) {
      seqs.push_back(&store.at(i));
      pos.push_back(select_positions(store.at(i), epoch, 9));
      repl.push_back(cold_start_sample(vocab.unigram(), ColdStartMode::Unigram,
                                       static_cast<int>(pos.back().indices.size()), rng));
    }
    AugmentedBatch ab = make_augmented_batch(seqs, pos, repl, vocab.size());
    const int k = ab.original.seq_len;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      std::set<int> in_s(ab.positions[i].begin(), ab.positions[i].end());
      for (int p = 0; p < k; ++p) {
        std::size_t flat = i * static_cast<std::size_t>(k) + static_cast<std::size_t>(p);
        int x = ab.original.ids[flat];
        int xt = ab.augmented.ids[flat];
        CHECK((ab.labels[flat] != 0) == (x == xt));           // label identity, brute recheck
        if (!in_s.count(p)) CHECK(x == xt);                   // off-S positions keep originals
        if (x == kClsId || x == kPadId) CHECK(!in_s.count(p));  // CLS/PAD never selected
        CHECK(xt != kPadId);
        CHECK(xt != kClsId);
      }
    }
  }
}

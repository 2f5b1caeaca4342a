#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace saslm {

// Purpose tags for deriving independent random streams from one root seed.
// Streams are keyed by (root, purpose, a, b) so draws for one purpose can
// never perturb another, which is what makes replay and resume bit-exact.
enum class RngPurpose : std::uint64_t {
  Init = 1,
  Shuffle = 2,
  SelectPositions = 3,
  ColdStart = 4,
  SampleNext = 5,
  Dropout = 6,
  OracleGen = 7,
  CorpusGen = 8,
  Eval = 9,
  Probe = 10,
};

// Counter-based generator (splitmix64 over a keyed counter). Unlike the
// std:: distributions, every draw here is fully specified by this header,
// so sequences are reproducible across standard libraries and platforms.
class Rng {
public:
  Rng(std::uint64_t root, RngPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
    state_ = mix(mix(mix(mix(0x9e3779b97f4a7c15ULL ^ root, static_cast<std::uint64_t>(purpose)), a), b), root);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection-free multiply-shift (Lemire).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; one value per call, no cached spare,
  // so the stream position is independent of call parity.
  double normal() {
    double u1 = unit();
    double u2 = unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Categorical draw by CDF scan over non-negative weights (need not sum to 1).
  template <class Seq>
  std::size_t categorical(const Seq& weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("Rng::categorical: negative weight");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("Rng::categorical: all weights zero");
    double r = unit() * total;
    double acc = 0.0;
    std::size_t last = 0;
    std::size_t i = 0;
    for (double w : weights) {
      acc += w;
      if (w > 0.0) last = i;
      if (r < acc) return i;
      ++i;
    }
    return last;  // guards against rounding at the top of the CDF
  }

  // k distinct values from [0, n), ascending. Partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k);

  // In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
  }

  std::uint64_t state_;
};

// FNV-1a over raw bytes; used for replay-identity checks on files and caches.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace saslm

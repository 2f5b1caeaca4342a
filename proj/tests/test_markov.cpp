#include <doctest.h>

#include <Eigen/Dense>
#include <map>

#include "saslm/corpus.hpp"
#include "saslm/markov.hpp"
#include "test_util.hpp"

using namespace saslm;

namespace {

MarkovOracle two_state() {
  Eigen::MatrixXd t(2, 2);
  t << 0.9, 0.1, 0.2, 0.8;
  Eigen::VectorXd init(2);
  init << 0.5, 0.5;
  return MarkovOracle(t, init, {"a", "b"});
}

}  // namespace

TEST_CASE("identity transition with a one-hot start is absorbing") {
  Eigen::MatrixXd t = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd init(3);
  init << 0, 1, 0;
  MarkovOracle oracle(t, init, {"x", "y", "z"});
  for (const auto& line : oracle.generate(10, 6, 5)) CHECK(line == "y y y y y y");
}

TEST_CASE("generation is bit-identical for the same (oracle, seed)") {
  MarkovOracle oracle = two_state();
  CHECK(oracle.generate(20, 30, 77) == oracle.generate(20, 30, 77));
  CHECK(oracle.generate(20, 30, 77) != oracle.generate(20, 30, 78));
}

TEST_CASE("non-stochastic transition rows are rejected") {
  Eigen::MatrixXd t(2, 2);
  t << 0.9, 0.2, 0.2, 0.8;  // first row sums to 1.1
  Eigen::VectorXd init(2);
  init << 0.5, 0.5;
  MarkovOracle oracle(t, init, {"a", "b"});
  CHECK_THROWS_AS(oracle.generate(1, 5, 1), std::runtime_error);
  CHECK_THROWS_AS(oracle.validate(), std::runtime_error);
}

// Analytic stationary distribution of [[0.9,0.1],[0.2,0.8]] is (2/3, 1/3),
// from solving pi = pi T before this test was written.
TEST_CASE("empirical frequencies converge to the analytic stationary distribution") {
  MarkovOracle oracle = two_state();
  Eigen::VectorXd pi = oracle.stationary();
  CHECK(pi(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(pi(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  auto lines = oracle.generate(1000, 100, 123);  // 100k tokens
  std::int64_t count_a = 0, total = 0;
  for (const auto& line : lines)
    for (const auto& tok : split_tokens(line)) {
      if (tok == "a") ++count_a;
      ++total;
    }
  CHECK(total == 100000);
  double freq_a = static_cast<double>(count_a) / static_cast<double>(total);
  CHECK(std::abs(freq_a - 2.0 / 3.0) < 0.01);
}

TEST_CASE("empirical bigram frequencies converge to the transition rows") {
  MarkovOracle oracle = MarkovOracle::random(8, 0.7, 3, 11);
  auto lines = oracle.generate(2000, 50, 321);  // 1e5 tokens
  std::map<std::string, int> name_to_idx;
  for (int i = 0; i < oracle.num_tokens(); ++i) name_to_idx[oracle.token_names()[static_cast<std::size_t>(i)]] = i;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(8, 8);
  for (const auto& line : lines) {
    auto toks = split_tokens(line);
    for (std::size_t i = 1; i < toks.size(); ++i) counts(name_to_idx[toks[i - 1]], name_to_idx[toks[i]]) += 1.0;
  }
  for (int r = 0; r < 8; ++r) {
    double row_total = counts.row(r).sum();
    REQUIRE(row_total > 0);
    double tv = 0.0;
    for (int c = 0; c < 8; ++c) tv += std::abs(counts(r, c) / row_total - oracle.transition()(r, c));
    CHECK(tv / 2.0 < 0.02);
  }
}

TEST_CASE("oracle file round-trips exactly") {
  saslm::testutil::TempDir tmp("oracle");
  MarkovOracle oracle = MarkovOracle::random(16, 0.8, 3, 222);
  oracle.save(tmp.path("oracle.txt"));
  MarkovOracle loaded = MarkovOracle::load(tmp.path("oracle.txt"));
  CHECK(loaded.num_tokens() == 16);
  CHECK((loaded.transition() - oracle.transition()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.initial() - oracle.initial()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.token_names() == oracle.token_names());
}

TEST_CASE("entropy ladder: bidirectional <= one-sided <= unigram") {
  MarkovOracle oracle = MarkovOracle::random(16, 0.8, 3, 31);
  double h2 = oracle.bidirectional_conditional_entropy();
  double h1 = oracle.conditional_entropy();
  double hu = oracle.unigram_entropy();
  CHECK(h2 > 0.0);
  CHECK(h2 <= h1 + 1e-12);
  CHECK(h1 <= hu + 1e-12);
}

TEST_CASE("deterministic chain has zero conditional entropy") {
  Eigen::MatrixXd t(2, 2);
  t << 0, 1, 1, 0;
  Eigen::VectorXd init(2);
  init << 0.5, 0.5;
  MarkovOracle oracle(t, init, {"a", "b"});
  CHECK(oracle.conditional_entropy() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(oracle.bidirectional_conditional_entropy() == doctest::Approx(0.0).epsilon(1e-12));
}

#include "saslm/markov.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace saslm {

MarkovOracle::MarkovOracle(Eigen::MatrixXd transition, Eigen::VectorXd initial,
                           std::vector<std::string> token_names)
    : transition_(std::move(transition)), initial_(std::move(initial)), token_names_(std::move(token_names)) {
  if (transition_.rows() != transition_.cols()) throw std::invalid_argument("MarkovOracle: transition must be square");
  if (initial_.size() != transition_.rows()) throw std::invalid_argument("MarkovOracle: initial size mismatch");
  if (token_names_.empty()) {
    token_names_.reserve(static_cast<std::size_t>(transition_.rows()));
    for (int i = 0; i < transition_.rows(); ++i) token_names_.push_back("t" + std::to_string(i));
  }
  if (static_cast<int>(token_names_.size()) != transition_.rows())
    throw std::invalid_argument("MarkovOracle: token name count mismatch");
}

MarkovOracle MarkovOracle::random(int num_tokens, double peak, int branch, std::uint64_t seed) {
  if (num_tokens < 2) throw std::invalid_argument("MarkovOracle::random: need >= 2 tokens");
  if (peak <= 0.0 || peak >= 1.0) throw std::invalid_argument("MarkovOracle::random: peak must be in (0,1)");
  branch = std::min(branch, num_tokens - 1);
  if (branch < 1) throw std::invalid_argument("MarkovOracle::random: branch must be >= 1");

  Rng rng(seed, RngPurpose::OracleGen);
  // Successor map is a random permutation so every state is reachable.
  std::vector<int> succ(static_cast<std::size_t>(num_tokens));
  for (int i = 0; i < num_tokens; ++i) succ[static_cast<std::size_t>(i)] = i;
  rng.shuffle(succ);

  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(num_tokens, num_tokens);
  for (int s = 0; s < num_tokens; ++s) {
    int main = succ[static_cast<std::size_t>(s)];
    if (main == s) main = (s + 1) % num_tokens;
    T(s, main) += peak;
    std::vector<int> others;
    others.reserve(static_cast<std::size_t>(num_tokens - 1));
    for (int j = 0; j < num_tokens; ++j)
      if (j != main) others.push_back(j);
    rng.shuffle(others);
    Eigen::VectorXd w(branch);
    for (int b = 0; b < branch; ++b) w(b) = 0.25 + rng.unit();
    w *= (1.0 - peak) / w.sum();
    for (int b = 0; b < branch; ++b) T(s, others[static_cast<std::size_t>(b)]) += w(b);
  }
  for (int s = 0; s < num_tokens; ++s) T.row(s) /= T.row(s).sum();

  Eigen::VectorXd init = Eigen::VectorXd::Constant(num_tokens, 1.0 / num_tokens);
  return MarkovOracle(std::move(T), std::move(init), {});
}

void MarkovOracle::validate() const {
  auto check_row = [](const Eigen::VectorXd& row, const std::string& what) {
    if ((row.array() < 0.0).any()) throw std::runtime_error("MarkovOracle: negative entry in " + what);
    if (std::abs(row.sum() - 1.0) > 1e-9) throw std::runtime_error("MarkovOracle: " + what + " does not sum to 1");
  };
  check_row(initial_, "initial distribution");
  for (int i = 0; i < transition_.rows(); ++i)
    check_row(transition_.row(i).transpose(), "transition row " + std::to_string(i));
}

std::vector<std::string> MarkovOracle::generate(int num_seqs, int seq_len, std::uint64_t seed) const {
  if (num_seqs < 1 || seq_len < 1) throw std::invalid_argument("MarkovOracle::generate: need num_seqs, seq_len >= 1");
  validate();
  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(num_seqs));
  for (int s = 0; s < num_seqs; ++s) {
    Rng rng(seed, RngPurpose::CorpusGen, static_cast<std::uint64_t>(s));
    std::ostringstream line;
    int state = static_cast<int>(rng.categorical(initial_));
    line << token_names_[static_cast<std::size_t>(state)];
    for (int t = 1; t < seq_len; ++t) {
      state = static_cast<int>(rng.categorical(transition_.row(state)));
      line << ' ' << token_names_[static_cast<std::size_t>(state)];
    }
    lines.push_back(line.str());
  }
  return lines;
}

Eigen::VectorXd MarkovOracle::stationary() const {
  int n = num_tokens();
  Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd next = transition_.transpose() * pi;
    next /= next.sum();
    double delta = (next - pi).cwiseAbs().maxCoeff();
    pi = next;
    if (delta < 1e-14) break;
  }
  return pi;
}

double MarkovOracle::conditional_entropy() const {
  Eigen::VectorXd pi = stationary();
  double h = 0.0;
  for (int a = 0; a < num_tokens(); ++a)
    for (int b = 0; b < num_tokens(); ++b) {
      double p = transition_(a, b);
      if (p > 0.0) h -= pi(a) * p * std::log(p);
    }
  return h;
}

double MarkovOracle::bidirectional_conditional_entropy() const {
  Eigen::VectorXd pi = stationary();
  int n = num_tokens();
  double h = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int c = 0; c < n; ++c) {
      // p(b | a, c) is proportional to T(a,b) T(b,c).
      double z = 0.0;
      for (int b = 0; b < n; ++b) z += transition_(a, b) * transition_(b, c);
      if (z <= 0.0) continue;
      for (int b = 0; b < n; ++b) {
        double joint = pi(a) * transition_(a, b) * transition_(b, c);
        if (joint > 0.0) h -= joint * std::log(transition_(a, b) * transition_(b, c) / z);
      }
    }
  }
  return h;
}

double MarkovOracle::unigram_entropy() const {
  Eigen::VectorXd pi = stationary();
  double h = 0.0;
  for (int i = 0; i < pi.size(); ++i)
    if (pi(i) > 0.0) h -= pi(i) * std::log(pi(i));
  return h;
}

void MarkovOracle::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write oracle file: " + path);
  out << std::setprecision(17);
  out << "order 1\n";
  out << "vocab " << num_tokens() << "\n";
  out << "tokens";
  for (const auto& t : token_names_) out << ' ' << t;
  out << "\ninitial";
  for (int i = 0; i < initial_.size(); ++i) out << ' ' << initial_(i);
  out << "\n";
  for (int r = 0; r < transition_.rows(); ++r) {
    for (int c = 0; c < transition_.cols(); ++c) out << (c ? " " : "") << transition_(r, c);
    out << "\n";
  }
}

MarkovOracle MarkovOracle::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read oracle file: " + path);
  std::string word;
  int order = 0, n = 0;
  if (!(in >> word >> order) || word != "order" || order != 1)
    throw std::runtime_error("oracle file: expected 'order 1' header");
  if (!(in >> word >> n) || word != "vocab" || n < 1)
    throw std::runtime_error("oracle file: expected 'vocab <n>'");
  if (!(in >> word) || word != "tokens") throw std::runtime_error("oracle file: expected 'tokens' line");
  std::vector<std::string> names(static_cast<std::size_t>(n));
  for (auto& t : names)
    if (!(in >> t)) throw std::runtime_error("oracle file: truncated token list");
  if (!(in >> word) || word != "initial") throw std::runtime_error("oracle file: expected 'initial' line");
  Eigen::VectorXd init(n);
  for (int i = 0; i < n; ++i)
    if (!(in >> init(i))) throw std::runtime_error("oracle file: truncated initial distribution");
  Eigen::MatrixXd T(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      if (!(in >> T(r, c))) throw std::runtime_error("oracle file: truncated transition matrix");
  MarkovOracle oracle(std::move(T), std::move(init), std::move(names));
  oracle.validate();
  return oracle;
}

}  // namespace saslm

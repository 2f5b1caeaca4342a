#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saslm/rng.hpp"

namespace saslm {

// Row-major dense matrix; the single storage type for activations,
// parameters and gradients. Scalar is float in training and double in the
// finite-difference checker, instantiated from the same op definitions.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

template <class S>
class Tape;

// Lightweight handle to a node on a tape.
template <class S>
struct Value {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& val() const { return tape->value(*this); }
  const Mat<S>& grad() const { return tape->grad(*this); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

namespace detail {
inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}
}  // namespace detail

template <class S>
[[noreturn]] inline void shape_error(const char* op, const Mat<S>& a, const Mat<S>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + detail::shape_str(a.rows(), a.cols()) +
                              " vs " + detail::shape_str(b.rows(), b.cols()));
}

// Ordered record of operations. Nodes are appended as the forward graph is
// built, so reverse creation order is a reverse topological order; the
// backward pass walks it once, accumulating each parent's gradient exactly
// once per recorded use.
template <class S>
class Tape {
public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Value<S> leaf(Mat<S> v, bool requires_grad) { return emplace(std::move(v), requires_grad, nullptr); }

  Value<S> constant(Mat<S> v) { return leaf(std::move(v), false); }

  Value<S> scalar_constant(S x) {
    Mat<S> m(1, 1);
    m(0, 0) = x;
    return constant(std::move(m));
  }

  const Mat<S>& value(Value<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Mat<S>& grad(Value<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool requires_grad(Value<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Id the next emplaced node will receive; closures capture it up front.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  Value<S> emplace(Mat<S> v, bool requires_grad, std::function<void(Tape&)> backward) {
#ifndef NDEBUG
    if (!v.allFinite()) throw std::runtime_error("tape: op produced non-finite values");
#endif
    nodes_.push_back(Node{std::move(v), Mat<S>(), requires_grad, std::move(backward)});
    return Value<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  // Seeds d(loss)/d(loss) = 1 and walks the record in reverse topological
  // order. Gradients of every node are zeroed first, so a tape supports one
  // backward per built graph (rebuild the graph to differentiate again).
  void backward(Value<S> loss) {
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::invalid_argument("backward: loss must be 1x1, got " + detail::shape_str(lv.rows(), lv.cols()));
    if (!std::isfinite(static_cast<double>(lv(0, 0)))) throw std::runtime_error("backward: non-finite loss");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = S(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this);
    }
  }

  Mat<S>& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Mat<S>& value_ref(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

private:
  std::vector<Node> nodes_;
};

// ---- matrix products -----------------------------------------------------

namespace detail {
template <class S>
Value<S> matmul_impl(Value<S> a, Value<S> b, bool transpose_b) {
  Tape<S>& t = *a.tape;
  const Mat<S>&A = a.val(), &B = b.val();
  Eigen::Index inner_b = transpose_b ? B.cols() : B.rows();
  if (A.cols() != inner_b) shape_error(transpose_b ? "matmul_nt" : "matmul", A, B);
  Mat<S> y = transpose_b ? Mat<S>(A * B.transpose()) : Mat<S>(A * B);
  bool ra = t.requires_grad(a), rb = t.requires_grad(b);
  if (!(ra || rb)) return t.constant(std::move(y));
  int ai = a.id, bi = b.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, bi, oi, ra, rb, transpose_b](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    if (transpose_b) {
      if (ra) tt.grad_ref(ai).noalias() += g * tt.value_ref(bi);
      if (rb) tt.grad_ref(bi).noalias() += g.transpose() * tt.value_ref(ai);
    } else {
      if (ra) tt.grad_ref(ai).noalias() += g * tt.value_ref(bi).transpose();
      if (rb) tt.grad_ref(bi).noalias() += tt.value_ref(ai).transpose() * g;
    }
  });
}
}  // namespace detail

template <class S>
Value<S> matmul(Value<S> a, Value<S> b) {
  return detail::matmul_impl(a, b, false);
}

// a * b^T; the tied-embedding projection uses this directly.
template <class S>
Value<S> matmul_nt(Value<S> a, Value<S> b) {
  return detail::matmul_impl(a, b, true);
}

// ---- pointwise and broadcast ops ------------------------------------------

template <class S>
Value<S> add(Value<S> a, Value<S> b) {
  Tape<S>& t = *a.tape;
  const Mat<S>&A = a.val(), &B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  Mat<S> y = A + B;
  bool ra = t.requires_grad(a), rb = t.requires_grad(b);
  if (!(ra || rb)) return t.constant(std::move(y));
  int ai = a.id, bi = b.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, bi, oi, ra, rb](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    if (ra) tt.grad_ref(ai) += g;
    if (rb) tt.grad_ref(bi) += g;
  });
}

// Adds a 1 x n row (bias) to every row of a.
template <class S>
Value<S> add_rowvec(Value<S> a, Value<S> r) {
  Tape<S>& t = *a.tape;
  const Mat<S>&A = a.val(), &R = r.val();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_rowvec", A, R);
  Mat<S> y = A.rowwise() + R.row(0);
  bool ra = t.requires_grad(a), rr = t.requires_grad(r);
  if (!(ra || rr)) return t.constant(std::move(y));
  int ai = a.id, ri = r.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, ri, oi, ra, rr](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    if (ra) tt.grad_ref(ai) += g;
    if (rr) tt.grad_ref(ri).row(0) += g.colwise().sum();
  });
}

template <class S>
Value<S> scale(Value<S> a, S c) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.val() * c;
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  int ai = a.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, oi, c](Tape<S>& tt) { tt.grad_ref(ai) += tt.grad_ref(oi) * c; });
}

template <class S>
Value<S> hadamard(Value<S> a, Value<S> b) {
  Tape<S>& t = *a.tape;
  const Mat<S>&A = a.val(), &B = b.val();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("hadamard", A, B);
  Mat<S> y = A.cwiseProduct(B);
  bool ra = t.requires_grad(a), rb = t.requires_grad(b);
  if (!(ra || rb)) return t.constant(std::move(y));
  int ai = a.id, bi = b.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, bi, oi, ra, rb](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    if (ra) tt.grad_ref(ai) += g.cwiseProduct(tt.value_ref(bi));
    if (rb) tt.grad_ref(bi) += g.cwiseProduct(tt.value_ref(ai));
  });
}

template <class S>
Value<S> gelu(Value<S> a) {
  Tape<S>& t = *a.tape;
  const Mat<S>& A = a.val();
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Mat<S> y = A.unaryExpr([](S x) {
    double xd = static_cast<double>(x);
    return static_cast<S>(xd * 0.5 * (1.0 + std::erf(xd * kInvSqrt2)));
  });
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  int ai = a.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, oi](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    const Mat<S>& x = tt.value_ref(ai);
    tt.grad_ref(ai) += g.cwiseProduct(x.unaryExpr([](S v) {
      double xd = static_cast<double>(v);
      double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
      return static_cast<S>(cdf + xd * pdf);
    }));
  });
}

// Logistic sigmoid with logits clamped to +-30 before exponentiation.
template <class S>
Value<S> sigmoid(Value<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.val().unaryExpr([](S x) {
    double z = std::min(30.0, std::max(-30.0, static_cast<double>(x)));
    return static_cast<S>(1.0 / (1.0 + std::exp(-z)));
  });
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  int ai = a.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ai, oi](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    const Mat<S>& y = tt.value_ref(oi);
    tt.grad_ref(ai) += g.cwiseProduct(y.cwiseProduct((Mat<S>::Ones(y.rows(), y.cols()) - y)));
  });
}

// ---- normalization and softmax --------------------------------------------

// Row-wise layernorm with a 1 x n gain and bias. Mean and variance are
// accumulated in double regardless of S.
template <class S>
Value<S> layernorm(Value<S> x, Value<S> gain, Value<S> bias, S eps) {
  Tape<S>& t = *x.tape;
  const Mat<S>&X = x.val(), &G = gain.val(), &B = bias.val();
  if (G.rows() != 1 || G.cols() != X.cols()) shape_error("layernorm gain", X, G);
  if (B.rows() != 1 || B.cols() != X.cols()) shape_error("layernorm bias", X, B);
  const Eigen::Index n = X.cols();
  Mat<S> xhat(X.rows(), n);
  Mat<S> inv_std(X.rows(), 1);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    double mean = X.row(r).template cast<double>().sum() / static_cast<double>(n);
    double var = (X.row(r).template cast<double>().array() - mean).square().sum() / static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std(r, 0) = static_cast<S>(is);
    xhat.row(r) = ((X.row(r).template cast<double>().array() - mean) * is).template cast<S>();
  }
  Mat<S> y = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  bool rx = t.requires_grad(x), rg = t.requires_grad(gain), rb = t.requires_grad(bias);
  if (!(rx || rg || rb)) return t.constant(std::move(y));
  int xi = x.id, gi = gain.id, bi = bias.id, oi = t.next_id();
  return t.emplace(std::move(y), true,
                   [xi, gi, bi, oi, rx, rg, rb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& tt) {
                     const Mat<S>& g = tt.grad_ref(oi);
                     const Mat<S>& gain_v = tt.value_ref(gi);
                     if (rg) tt.grad_ref(gi).row(0) += g.cwiseProduct(xhat).colwise().sum();
                     if (rb) tt.grad_ref(bi).row(0) += g.colwise().sum();
                     if (rx) {
                       Mat<S>& gx = tt.grad_ref(xi);
                       const double n = static_cast<double>(xhat.cols());
                       for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                         Eigen::Array<double, 1, Eigen::Dynamic> dxhat =
                             (g.row(r).array() * gain_v.row(0).array()).template cast<double>();
                         Eigen::Array<double, 1, Eigen::Dynamic> xh = xhat.row(r).array().template cast<double>();
                         double sum_dxhat = dxhat.sum();
                         double sum_dxhat_xh = (dxhat * xh).sum();
                         gx.row(r) += (static_cast<double>(inv_std(r, 0)) *
                                       (dxhat - sum_dxhat / n - xh * (sum_dxhat_xh / n)))
                                          .template cast<S>()
                                          .matrix();
                       }
                     }
                   });
}

// Row-wise log-softmax via max subtraction; log-sum-exp accumulated in double.
template <class S>
Value<S> log_softmax_rows(Value<S> x) {
  Tape<S>& t = *x.tape;
  const Mat<S>& X = x.val();
  Mat<S> y(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    double m = static_cast<double>(X.row(r).maxCoeff());
    double lse = std::log((X.row(r).template cast<double>().array() - m).exp().sum()) + m;
    y.row(r) = (X.row(r).template cast<double>().array() - lse).template cast<S>();
  }
  if (!t.requires_grad(x)) return t.constant(std::move(y));
  int xi = x.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [xi, oi](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    const Mat<S>& y = tt.value_ref(oi);
    Mat<S>& gx = tt.grad_ref(xi);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double gsum = g.row(r).template cast<double>().sum();
      gx.row(r) += (g.row(r).template cast<double>().array() -
                    y.row(r).template cast<double>().array().exp() * gsum)
                       .template cast<S>()
                       .matrix();
    }
  });
}

// ---- gathers ---------------------------------------------------------------

// Rows of `table` addressed by token id; backward scatters into the table.
template <class S>
Value<S> embedding_gather(Value<S> table, const std::vector<int>& ids) {
  Tape<S>& t = *table.tape;
  const Mat<S>& T = table.val();
  for (int id : ids)
    if (id < 0 || id >= T.rows())
      throw std::invalid_argument("embedding_gather: id " + std::to_string(id) + " out of range [0," +
                                  std::to_string(T.rows()) + ")");
  Mat<S> y(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  if (!t.requires_grad(table)) return t.constant(std::move(y));
  int ti = table.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [ti, oi, ids](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    Mat<S>& gt = tt.grad_ref(ti);
    for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// Same gather over arbitrary row indices of an activation matrix.
template <class S>
Value<S> row_gather(Value<S> x, const std::vector<int>& rows) {
  Tape<S>& t = *x.tape;
  const Mat<S>& X = x.val();
  for (int r : rows)
    if (r < 0 || r >= X.rows())
      throw std::invalid_argument("row_gather: row " + std::to_string(r) + " out of range [0," +
                                  std::to_string(X.rows()) + ")");
  Mat<S> y(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  if (!t.requires_grad(x)) return t.constant(std::move(y));
  int xi = x.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [xi, oi, rows](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    Mat<S>& gx = tt.grad_ref(xi);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// Picks one column per row: out(i, 0) = x(i, cols[i]).
template <class S>
Value<S> pick_per_row(Value<S> x, const std::vector<int>& cols) {
  Tape<S>& t = *x.tape;
  const Mat<S>& X = x.val();
  if (static_cast<Eigen::Index>(cols.size()) != X.rows())
    throw std::invalid_argument("pick_per_row: need one column index per row");
  for (int c : cols)
    if (c < 0 || c >= X.cols())
      throw std::invalid_argument("pick_per_row: column " + std::to_string(c) + " out of range [0," +
                                  std::to_string(X.cols()) + ")");
  Mat<S> y(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) y(i, 0) = X(i, cols[static_cast<std::size_t>(i)]);
  if (!t.requires_grad(x)) return t.constant(std::move(y));
  int xi = x.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [xi, oi, cols](Tape<S>& tt) {
    const Mat<S>& g = tt.grad_ref(oi);
    Mat<S>& gx = tt.grad_ref(xi);
    for (Eigen::Index i = 0; i < g.rows(); ++i) gx(i, cols[static_cast<std::size_t>(i)]) += g(i, 0);
  });
}

// ---- reductions ------------------------------------------------------------

template <class S>
Value<S> sum_all(Value<S> x) {
  Tape<S>& t = *x.tape;
  Mat<S> y(1, 1);
  y(0, 0) = static_cast<S>(x.val().template cast<double>().sum());
  if (!t.requires_grad(x)) return t.constant(std::move(y));
  int xi = x.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [xi, oi](Tape<S>& tt) {
    tt.grad_ref(xi).array() += tt.grad_ref(oi)(0, 0);
  });
}

template <class S>
Value<S> mean_all(Value<S> x) {
  Tape<S>& t = *x.tape;
  const Mat<S>& X = x.val();
  if (X.size() == 0) throw std::invalid_argument("mean_all: empty input");
  S inv = static_cast<S>(1.0 / static_cast<double>(X.size()));
  return scale(sum_all(x), inv);
}

// ---- losses ----------------------------------------------------------------

// Mean over masked entries of the numerically stable binary cross-entropy
// computed from logits: softplus(z) - z*y. Gradient is (sigmoid(z) - y)/count.
template <class S>
Value<S> bce_with_logits_masked_mean(Value<S> z, const Mat<S>& labels, const std::vector<std::uint8_t>& mask) {
  Tape<S>& t = *z.tape;
  const Mat<S>& Z = z.val();
  if (Z.cols() != 1 || labels.cols() != 1 || labels.rows() != Z.rows())
    shape_error("bce_with_logits", Z, labels);
  if (static_cast<Eigen::Index>(mask.size()) != Z.rows())
    throw std::invalid_argument("bce_with_logits: mask length mismatch");
  double acc = 0.0;
  std::int64_t count = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    double zd = static_cast<double>(Z(i, 0));
    double yd = static_cast<double>(labels(i, 0));
    double softplus = std::max(zd, 0.0) + std::log1p(std::exp(-std::abs(zd)));
    acc += softplus - zd * yd;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("bce_with_logits: empty mask");
  Mat<S> y(1, 1);
  y(0, 0) = static_cast<S>(acc / static_cast<double>(count));
  if (!t.requires_grad(z)) return t.constant(std::move(y));
  int zi = z.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [zi, oi, labels, mask, count](Tape<S>& tt) {
    S g = tt.grad_ref(oi)(0, 0) / static_cast<S>(count);
    const Mat<S>& Z = tt.value_ref(zi);
    Mat<S>& gz = tt.grad_ref(zi);
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      double zd = static_cast<double>(Z(i, 0));
      double sig = 1.0 / (1.0 + std::exp(-zd));
      gz(i, 0) += g * static_cast<S>(sig - static_cast<double>(labels(i, 0)));
    }
  });
}

// ---- dropout ----------------------------------------------------------------

// Inverted dropout; identity (no node) when rate == 0. Mask draws come from
// the caller's stream so training steps replay exactly.
template <class S>
Value<S> dropout(Value<S> x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  Tape<S>& t = *x.tape;
  const Mat<S>& X = x.val();
  Mat<S> mask(X.rows(), X.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) mask(r, c) = rng.unit() < rate ? S(0) : keep_scale;
  Mat<S> y = X.cwiseProduct(mask);
  if (!t.requires_grad(x)) return t.constant(std::move(y));
  int xi = x.id, oi = t.next_id();
  return t.emplace(std::move(y), true, [xi, oi, mask = std::move(mask)](Tape<S>& tt) {
    tt.grad_ref(xi) += tt.grad_ref(oi).cwiseProduct(mask);
  });
}

// ---- fused multi-head attention ---------------------------------------------

// Scaled dot-product attention over already-projected Q, K, V, each laid out
// as (batch * seq_len) x hidden with heads in contiguous column groups.
// Padded key positions are excluded from the softmax via a large negative
// additive bias. Optional dropout on the attention probabilities.
template <class S>
Value<S> multihead_attention(Value<S> q, Value<S> k, Value<S> v, const std::vector<std::uint8_t>& pad_mask,
                             int batch, int seq_len, int num_heads, double dropout_rate, Rng* rng) {
  Tape<S>& t = *q.tape;
  const Mat<S>&Q = q.val(), &K = k.val(), &V = v.val();
  if (Q.rows() != K.rows() || Q.cols() != K.cols()) shape_error("multihead_attention", Q, K);
  if (Q.rows() != V.rows() || Q.cols() != V.cols()) shape_error("multihead_attention", Q, V);
  const Eigen::Index hidden = Q.cols();
  if (hidden % num_heads != 0) throw std::invalid_argument("multihead_attention: hidden not divisible by heads");
  if (Q.rows() != static_cast<Eigen::Index>(batch) * seq_len)
    throw std::invalid_argument("multihead_attention: rows != batch * seq_len");
  if (static_cast<Eigen::Index>(pad_mask.size()) != Q.rows())
    throw std::invalid_argument("multihead_attention: pad mask length mismatch");
  const Eigen::Index d = hidden / num_heads;
  const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
  const S neg = static_cast<S>(-1e9);

  // probs is (batch * heads * seq_len) x seq_len, blocks ordered (b, h).
  Mat<S> probs(static_cast<Eigen::Index>(batch) * num_heads * seq_len, seq_len);
  Mat<S> y(Q.rows(), hidden);
  const bool do_dropout = dropout_rate > 0.0 && rng != nullptr;
  Mat<S> drop_mask;
  if (do_dropout) drop_mask.resize(probs.rows(), probs.cols());
  const S keep_scale = static_cast<S>(do_dropout ? 1.0 / (1.0 - dropout_rate) : 1.0);

  for (int b = 0; b < batch; ++b) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(b) * seq_len;
    for (int h = 0; h < num_heads; ++h) {
      const Eigen::Index col0 = static_cast<Eigen::Index>(h) * d;
      auto Qb = Q.block(row0, col0, seq_len, d);
      auto Kb = K.block(row0, col0, seq_len, d);
      auto Vb = V.block(row0, col0, seq_len, d);
      Mat<S> scores = Qb * Kb.transpose() * att_scale;
      for (Eigen::Index j = 0; j < seq_len; ++j)
        if (!pad_mask[static_cast<std::size_t>(row0 + j)]) scores.col(j).array() += neg;
      const Eigen::Index p0 = (static_cast<Eigen::Index>(b) * num_heads + h) * seq_len;
      for (Eigen::Index i = 0; i < seq_len; ++i) {
        double m = static_cast<double>(scores.row(i).maxCoeff());
        Eigen::Array<double, 1, Eigen::Dynamic> e =
            (scores.row(i).template cast<double>().array() - m).exp();
        probs.row(p0 + i) = (e / e.sum()).template cast<S>();
      }
      if (do_dropout) {
        for (Eigen::Index i = 0; i < seq_len; ++i)
          for (Eigen::Index j = 0; j < seq_len; ++j)
            drop_mask(p0 + i, j) = rng->unit() < dropout_rate ? S(0) : keep_scale;
        y.block(row0, col0, seq_len, d).noalias() =
            probs.block(p0, 0, seq_len, seq_len).cwiseProduct(drop_mask.block(p0, 0, seq_len, seq_len)) * Vb;
      } else {
        y.block(row0, col0, seq_len, d).noalias() = probs.block(p0, 0, seq_len, seq_len) * Vb;
      }
    }
  }

  bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  if (!rg) return t.constant(std::move(y));
  int qi = q.id, ki = k.id, vi = v.id, oi = t.next_id();
  return t.emplace(
      std::move(y), true,
      [qi, ki, vi, oi, batch, seq_len, num_heads, d, att_scale, probs = std::move(probs),
       drop_mask = std::move(drop_mask), do_dropout](Tape<S>& tt) {
        const Mat<S>& g = tt.grad_ref(oi);
        const Mat<S>&Q = tt.value_ref(qi), &K = tt.value_ref(ki), &V = tt.value_ref(vi);
        Mat<S>&gq = tt.grad_ref(qi), &gk = tt.grad_ref(ki), &gv = tt.grad_ref(vi);
        for (int b = 0; b < batch; ++b) {
          const Eigen::Index row0 = static_cast<Eigen::Index>(b) * seq_len;
          for (int h = 0; h < num_heads; ++h) {
            const Eigen::Index col0 = static_cast<Eigen::Index>(h) * d;
            const Eigen::Index p0 = (static_cast<Eigen::Index>(b) * num_heads + h) * seq_len;
            auto P = probs.block(p0, 0, seq_len, seq_len);
            auto Gb = g.block(row0, col0, seq_len, d);
            auto Vb = V.block(row0, col0, seq_len, d);
            Mat<S> P_eff = do_dropout ? Mat<S>(P.cwiseProduct(drop_mask.block(p0, 0, seq_len, seq_len))) : Mat<S>(P);
            gv.block(row0, col0, seq_len, d).noalias() += P_eff.transpose() * Gb;
            Mat<S> dP = Gb * Vb.transpose();
            if (do_dropout) dP = dP.cwiseProduct(drop_mask.block(p0, 0, seq_len, seq_len));
            // softmax backward: dS = P .* (dP - rowsum(dP .* P))
            Mat<S> dS(seq_len, seq_len);
            for (Eigen::Index i = 0; i < seq_len; ++i) {
              double dot = (dP.row(i).template cast<double>().array() * P.row(i).template cast<double>().array()).sum();
              dS.row(i) = (P.row(i).template cast<double>().array() *
                           (dP.row(i).template cast<double>().array() - dot))
                              .template cast<S>();
            }
            dS *= att_scale;
            gq.block(row0, col0, seq_len, d).noalias() += dS * K.block(row0, col0, seq_len, d);
            gk.block(row0, col0, seq_len, d).noalias() += dS.transpose() * Q.block(row0, col0, seq_len, d);
          }
        }
      });
}

}  // namespace saslm

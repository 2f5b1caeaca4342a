#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "saslm/rng.hpp"
#include "saslm/tape.hpp"

namespace saslm {

// Central-difference gradient verification. `eval(nullptr)` returns the loss
// for the current parameter values; `eval(&grads)` additionally runs a
// backward pass and fills one gradient matrix per parameter, same order.
// The callable must be deterministic. Returns the max over sampled
// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class S>
double grad_check(const std::vector<Mat<S>*>& params,
                  const std::function<double(std::vector<Mat<S>>*)>& eval, double eps, int num_coords,
                  std::uint64_t seed, int* coords_checked = nullptr) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  std::vector<Mat<S>> analytic;
  double base = eval(&analytic);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");
  if (analytic.size() != params.size()) throw std::runtime_error("grad_check: gradient count mismatch");

  std::int64_t total = 0;
  for (const auto* p : params) total += p->size();
  if (total == 0) throw std::invalid_argument("grad_check: no parameters");

  Rng rng(seed, RngPurpose::Eval);
  double max_rel = 0.0;
  int checked = 0;
  const bool exhaustive = total <= num_coords;
  std::int64_t flat = 0;
  while (checked < num_coords && (!exhaustive || flat < total)) {
    std::int64_t coord = exhaustive ? flat++ : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
    std::int64_t offset = coord;
    std::size_t pi = 0;
    while (offset >= params[pi]->size()) {
      offset -= params[pi]->size();
      ++pi;
    }
    S* slot = params[pi]->data() + offset;
    const S saved = *slot;
    *slot = saved + static_cast<S>(eps);
    double f_plus = eval(nullptr);
    *slot = saved - static_cast<S>(eps);
    double f_minus = eval(nullptr);
    *slot = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) throw std::runtime_error("grad_check: non-finite loss");
    double numeric = (f_plus - f_minus) / (2.0 * eps);
    double a = static_cast<double>(*(analytic[pi].data() + offset));
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > max_rel) max_rel = rel;
    ++checked;
  }
  if (coords_checked) *coords_checked = checked;
  return max_rel;
}

}  // namespace saslm

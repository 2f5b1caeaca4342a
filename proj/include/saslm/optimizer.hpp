#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "saslm/model.hpp"
#include "saslm/tape.hpp"

namespace saslm {

// Linear warmup to the peak, then linear decay to zero at the end of
// training: lr(s) = peak * s / warmup for s < warmup, else
// peak * (total - s) / (total - warmup).
struct LrSchedule {
  double peak = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  double value(std::int64_t step) const {
    if (step < 0) throw std::invalid_argument("LrSchedule: negative step");
    if (step >= total_steps) return 0.0;
    if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay and bias correction. Decay is skipped
// for parameters registered with weight_decay = false (biases, norms).
class AdamW {
public:
  AdamW(const std::vector<ParamRef<float>>& registry, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(registry.size());
    v_.reserve(registry.size());
    for (const auto& ref : registry) {
      m_.push_back(MatF::Zero(ref.mat->rows(), ref.mat->cols()));
      v_.push_back(MatF::Zero(ref.mat->rows(), ref.mat->cols()));
    }
  }

  void step(const std::vector<ParamRef<float>>& registry, const std::vector<MatF>& grads, double lr) {
    if (registry.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("AdamW::step: registry/gradient count mismatch");
    ++t_;
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float bc1 = 1.0f - static_cast<float>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const float lrf = static_cast<float>(lr), epsf = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      MatF& w = *registry[i].mat;
      const MatF& g = grads[i];
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
      if (registry[i].weight_decay && cfg_.weight_decay > 0.0)
        w -= (lrf * static_cast<float>(cfg_.weight_decay)) * w;
      w.array() -= lrf * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + epsf);
    }
  }

  std::uint64_t steps_taken() const { return t_; }
  const std::vector<MatF>& first_moments() const { return m_; }
  const std::vector<MatF>& second_moments() const { return v_; }

  // Checkpoint restore.
  void restore(std::uint64_t t, std::vector<MatF> m, std::vector<MatF> v) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw std::invalid_argument("AdamW::restore: moment count mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  const AdamConfig& config() const { return cfg_; }

private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<MatF> m_, v_;
};

}  // namespace saslm

#include "avatarfield/autodiff/adam.hpp"

#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ContractError("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double step = cfg_.learning_rate * std::sqrt(c2) / c1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    // Untouched sparse rows (hash entries never looked up) keep their moments.
    if (g == 0.0 && m_[i] == 0.0 && v_[i] == 0.0) continue;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    params[i] -= step * m_[i] / (std::sqrt(v_[i]) + cfg_.epsilon * std::sqrt(c2));
  }
}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::int64_t steps) {
  if (m.size() != m_.size() || v.size() != v_.size() || steps < 0) throw ContractError("adam: bad state");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = steps;
}

}  // namespace avatarfield::ad

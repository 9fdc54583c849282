#include "emts/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace emts::nn {

bool Adam::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) throw std::invalid_argument("Adam: parameter/gradient shape mismatch");
  }
  for (const auto& g : grads) {
    for (double x : g) {
      if (!std::isfinite(x)) {
        ++skipped_;
        return false;
      }
    }
  }
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  } else if (first_.size() != params.size()) {
    throw std::invalid_argument("Adam: parameter layout changed between steps");
  }

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = first_[i];
    auto& v = second_[i];
    if (m.size() != params[i].size()) throw std::invalid_argument("Adam: parameter layout changed between steps");
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      const double g = grads[i][k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      double& p = params[i][k];
      p -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) + cfg_.weight_decay * p);
    }
  }
  return true;
}

}  // namespace emts::nn

#include "emts/nn/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace emts::nn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void GmmPolicy::validate() const {
  if (weights.empty() || means.size() != weights.size() || stds.size() != weights.size()) {
    throw std::invalid_argument("GmmPolicy: inconsistent component count");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("GmmPolicy: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("GmmPolicy: weights do not sum to 1");
  const auto d = means.front().size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (means[i].size() != d || stds[i].size() != d) throw std::invalid_argument("GmmPolicy: dimension mismatch");
    if (!(stds[i].array() > 0.0).all()) throw std::invalid_argument("GmmPolicy: non-positive std");
  }
}

double diag_gaussian_log_prob(std::span<const double> mean, std::span<const double> std,
                              std::span<const double> z) {
  if (mean.size() != z.size() || std.size() != z.size()) {
    throw std::invalid_argument("diag_gaussian_log_prob: dimension mismatch");
  }
  double lp = 0.0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    const double u = (z[d] - mean[d]) / std[d];
    lp += -0.5 * u * u - std::log(std[d]) - kHalfLog2Pi;
  }
  return lp;
}

double gmm_log_prob(const GmmPolicy& policy, std::span<const double> z) {
  const int m = policy.components();
  std::vector<double> terms(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto& mu = policy.means[static_cast<std::size_t>(i)];
    const auto& sd = policy.stds[static_cast<std::size_t>(i)];
    terms[static_cast<std::size_t>(i)] =
        std::log(policy.weights[static_cast<std::size_t>(i)]) +
        diag_gaussian_log_prob({mu.data(), static_cast<std::size_t>(mu.size())},
                               {sd.data(), static_cast<std::size_t>(sd.size())}, z);
  }
  return log_sum_exp(terms);
}

Vector diag_gaussian_sample(const Vector& mean, const Vector& std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(mean.size());
  for (Eigen::Index d = 0; d < mean.size(); ++d) z(d) = mean(d) + std(d) * normal(rng);
  return z;
}

Vector gmm_sample(const GmmPolicy& policy, std::mt19937_64& rng) {
  std::size_t component = 0;
  if (policy.weights.size() > 1) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cumulative = 0.0;
    component = policy.weights.size() - 1;
    for (std::size_t i = 0; i < policy.weights.size(); ++i) {
      cumulative += policy.weights[i];
      if (u < cumulative && policy.weights[i] > 0.0) {
        component = i;
        break;
      }
    }
    // Guard against rounding placing u past the last positive weight.
    while (policy.weights[component] <= 0.0 && component > 0) --component;
  }
  return diag_gaussian_sample(policy.means[component], policy.stds[component], rng);
}

GmmPolicy GmmHead::decode(std::span<const double> raw) const {
  if (static_cast<int>(raw.size()) != size()) throw std::invalid_argument("GmmHead: raw size mismatch");
  GmmPolicy p;
  const auto m = static_cast<std::size_t>(components);
  const auto d = static_cast<std::size_t>(dim);
  const double max_logit = *std::max_element(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(m));
  double total = 0.0;
  p.weights.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    p.weights[i] = std::exp(raw[i] - max_logit);
    total += p.weights[i];
  }
  for (double& w : p.weights) w /= total;
  const std::size_t mean_off = m;
  const std::size_t lstd_off = m + m * d;
  for (std::size_t i = 0; i < m; ++i) {
    Vector mu(static_cast<Eigen::Index>(d));
    Vector sd(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) {
      mu(static_cast<Eigen::Index>(k)) = raw[mean_off + i * d + k];
      sd(static_cast<Eigen::Index>(k)) = std::max(std::exp(raw[lstd_off + i * d + k]), min_std);
    }
    p.means.push_back(std::move(mu));
    p.stds.push_back(std::move(sd));
  }
  return p;
}

double GmmHead::log_prob(std::span<const double> raw, std::span<const double> z, std::span<double> grad_raw) const {
  if (static_cast<int>(raw.size()) != size() || static_cast<int>(z.size()) != dim) {
    throw std::invalid_argument("GmmHead::log_prob: size mismatch");
  }
  const auto m = static_cast<std::size_t>(components);
  const auto d = static_cast<std::size_t>(dim);
  const std::size_t mean_off = m;
  const std::size_t lstd_off = m + m * d;
  const double log_min_std = std::log(min_std);

  // log softmax of the logits
  std::vector<double> log_w(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(m));
  const double lse_logits = log_sum_exp(log_w);
  for (double& lw : log_w) lw -= lse_logits;

  std::vector<double> joint(m);
  for (std::size_t i = 0; i < m; ++i) {
    double lp = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double ls = std::max(raw[lstd_off + i * d + k], log_min_std);
      const double u = (z[k] - raw[mean_off + i * d + k]) * std::exp(-ls);
      lp += -0.5 * u * u - ls - kHalfLog2Pi;
    }
    joint[i] = log_w[i] + lp;
  }
  const double total = log_sum_exp(joint);
  if (grad_raw.empty()) return total;
  if (grad_raw.size() != raw.size()) throw std::invalid_argument("GmmHead::log_prob: gradient size mismatch");

  for (std::size_t i = 0; i < m; ++i) {
    const double resp = std::exp(joint[i] - total);
    const double w = std::exp(log_w[i]);
    grad_raw[i] += resp - w;
    for (std::size_t k = 0; k < d; ++k) {
      const double raw_ls = raw[lstd_off + i * d + k];
      const double ls = std::max(raw_ls, log_min_std);
      const double inv_var = std::exp(-2.0 * ls);
      const double diff = z[k] - raw[mean_off + i * d + k];
      grad_raw[mean_off + i * d + k] += resp * diff * inv_var;
      if (raw_ls > log_min_std) grad_raw[lstd_off + i * d + k] += resp * (diff * diff * inv_var - 1.0);
    }
  }
  return total;
}

}  // namespace emts::nn

#pragma once

#include <random>
#include <span>
#include <vector>

#include "emts/nn/mlp.hpp"

namespace emts::nn {

inline constexpr double kMinStd = 1e-6;

/// Diagonal-covariance Gaussian mixture over the latent space.
struct GmmPolicy {
  std::vector<double> weights;  // M, sums to 1
  std::vector<Vector> means;    // M x d
  std::vector<Vector> stds;     // M x d, strictly positive

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }

  /// Throws std::invalid_argument if weights do not sum to 1 (1e-6) or a std is not positive.
  void validate() const;
};

/// log N(z; mean, diag(std^2)).
double diag_gaussian_log_prob(std::span<const double> mean, std::span<const double> std,
                              std::span<const double> z);

/// log sum_i w_i N(z; mean_i, diag(std_i^2)), evaluated with log-sum-exp.
double gmm_log_prob(const GmmPolicy& policy, std::span<const double> z);

/// Component drawn by weight, then a diagonal Gaussian draw.
Vector gmm_sample(const GmmPolicy& policy, std::mt19937_64& rng);

/// Draw from a single diagonal Gaussian; consumes the rng exactly like a one-component `gmm_sample`.
Vector diag_gaussian_sample(const Vector& mean, const Vector& std, std::mt19937_64& rng);

/// Raw network outputs parameterising a mixture:
/// [M logits | M*d means | M*d log-stds]. Weights are softmax(logits) and
/// stds are exp(log-std) floored at `min_std`.
struct GmmHead {
  int components{3};
  int dim{8};
  double min_std{kMinStd};

  int size() const { return components * (1 + 2 * dim); }

  GmmPolicy decode(std::span<const double> raw) const;

  /// log-density of z under the decoded mixture; when `grad_raw` is non-empty
  /// the gradient of the log-density with respect to `raw` is added into it.
  double log_prob(std::span<const double> raw, std::span<const double> z, std::span<double> grad_raw = {}) const;
};

}  // namespace emts::nn

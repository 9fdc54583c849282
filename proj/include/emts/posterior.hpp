#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/tree_search.hpp"

namespace emts {

enum class VisitNorm { Softmax, Linear };

struct PosteriorConfig {
  double lambda{1.0};
  std::vector<double> expert_weights;  // m_n; empty means uniform
  VisitNorm visit_norm{VisitNorm::Softmax};

  /// Throws ConfigError unless lambda > 0 and the weights are non-negative and sum to 1.
  void validate() const;
  /// Weights for `n` experts: the configured ones, or uniform when none are configured.
  std::vector<double> weights_for(std::size_t n) const;
};

void to_json(nlohmann::json& j, const PosteriorConfig& c);
void from_json(const nlohmann::json& j, PosteriorConfig& c);

inline constexpr double kExpertPriorFloor = 1e-12;

/// Softmax of raw visit counts (or N / sum N with VisitNorm::Linear).
std::vector<double> visit_weight(std::span<const int> visits, VisitNorm norm = VisitNorm::Softmax);

/// Unnormalized sum_n m_n pi_n(z_k | o) per atom. Throws std::domain_error on a non-finite density.
std::vector<double> fused_expert_prior(const std::vector<std::vector<double>>& expert_log_density,
                                       std::span<const double> weights);

/// (p^(1/lambda) * w) / sum. p is floored at kExpertPriorFloor.
std::vector<double> posterior_from(std::span<const double> expert_prior, std::span<const double> w, double lambda);

/// Improved policy over the result's atoms; equals the visit weights when the result has no expert densities.
std::vector<double> improved_policy(const SearchResult& result, const PosteriorConfig& cfg);

}  // namespace emts

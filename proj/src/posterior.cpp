#include "emts/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "emts/errors.hpp"

namespace emts {

void PosteriorConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("posterior.lambda must be a positive number");
  if (expert_weights.empty()) return;
  double sum = 0.0;
  for (double m : expert_weights) {
    if (!(m >= 0.0)) throw ConfigError("posterior.expert_weights must be non-negative");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("posterior.expert_weights must sum to 1");
}

std::vector<double> PosteriorConfig::weights_for(std::size_t n) const {
  if (expert_weights.empty()) return std::vector<double>(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  if (expert_weights.size() != n) {
    throw ConfigError("posterior.expert_weights has " + std::to_string(expert_weights.size()) + " entries for " +
                      std::to_string(n) + " experts");
  }
  return expert_weights;
}

void to_json(nlohmann::json& j, const PosteriorConfig& c) {
  j = {{"lambda", c.lambda},
       {"expert_weights", c.expert_weights},
       {"visit_norm", c.visit_norm == VisitNorm::Softmax ? "softmax" : "linear"}};
}

void from_json(const nlohmann::json& j, PosteriorConfig& c) {
  c = PosteriorConfig{};
  c.lambda = j.value("lambda", c.lambda);
  c.expert_weights = j.value("expert_weights", c.expert_weights);
  const std::string norm = j.value("visit_norm", std::string("softmax"));
  if (norm == "softmax") c.visit_norm = VisitNorm::Softmax;
  else if (norm == "linear") c.visit_norm = VisitNorm::Linear;
  else throw ConfigError("posterior.visit_norm must be \"softmax\" or \"linear\"");
}

std::vector<double> visit_weight(std::span<const int> visits, VisitNorm norm) {
  const std::size_t k = visits.size();
  std::vector<double> w(k, 0.0);
  if (k == 0) return w;
  if (norm == VisitNorm::Linear) {
    const double total = std::accumulate(visits.begin(), visits.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) w[i] = total > 0.0 ? visits[i] / total : 1.0 / static_cast<double>(k);
    return w;
  }
  const int m = *std::max_element(visits.begin(), visits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp(static_cast<double>(visits[i] - m));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

std::vector<double> fused_expert_prior(const std::vector<std::vector<double>>& expert_log_density,
                                       std::span<const double> weights) {
  if (expert_log_density.size() != weights.size())
    throw std::invalid_argument("fused_expert_prior: one weight per expert required");
  if (expert_log_density.empty()) return {};
  const std::size_t k = expert_log_density.front().size();
  std::vector<double> p(k, 0.0);
  for (std::size_t n = 0; n < expert_log_density.size(); ++n) {
    if (expert_log_density[n].size() != k) throw std::invalid_argument("fused_expert_prior: ragged densities");
    for (std::size_t i = 0; i < k; ++i) {
      const double d = std::exp(expert_log_density[n][i]);
      if (!std::isfinite(d)) throw std::domain_error("fused_expert_prior: non-finite expert density");
      p[i] += weights[n] * d;
    }
  }
  return p;
}

std::vector<double> posterior_from(std::span<const double> expert_prior, std::span<const double> w, double lambda) {
  if (expert_prior.size() != w.size()) throw std::invalid_argument("posterior_from: size mismatch");
  const std::size_t k = w.size();
  const double inv = 1.0 / lambda;
  std::vector<double> pi(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pi[i] = std::pow(std::max(expert_prior[i], kExpertPriorFloor), inv) * w[i];
    sum += pi[i];
  }
  if (std::isfinite(sum) && sum > 0.0) {
    for (double& x : pi) x /= sum;
    return pi;
  }
  // Powers over- or underflowed; redo the product in log space.
  std::vector<double> logs(k);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    logs[i] = inv * std::log(std::max(expert_prior[i], kExpertPriorFloor)) + std::log(w[i]);
    m = std::max(m, logs[i]);
  }
  sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pi[i] = std::exp(logs[i] - m);
    sum += pi[i];
  }
  for (double& x : pi) x /= sum;
  return pi;
}

std::vector<double> improved_policy(const SearchResult& result, const PosteriorConfig& cfg) {
  const std::vector<double> w = visit_weight(result.visits, cfg.visit_norm);
  if (result.expert_log_density.empty()) return w;
  const std::vector<double> m = cfg.weights_for(result.expert_log_density.size());
  return posterior_from(fused_expert_prior(result.expert_log_density, m), w, cfg.lambda);
}

}  // namespace emts

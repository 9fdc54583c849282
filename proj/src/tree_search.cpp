#include "emts/tree_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "emts/errors.hpp"

namespace emts {

using nlohmann::json;

void SearchConfig::validate() const {
  if (num_atoms < 2) throw ConfigError("search.num_atoms (K) must be >= 2");
  if (num_simulations < 2) throw ConfigError("search.num_simulations must be >= 2");
  if (!(c1 > 0.0 && c2 > 0.0)) throw ConfigError("search.c1 and search.c2 must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("search.alpha must be in [0,1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("search.gamma must be in [0,1]");
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("search.discount must be in (0,1]");
  if (!(temperature >= 0.0)) throw ConfigError("search.temperature must be >= 0");
}

void to_json(json& j, const SearchConfig& c) {
  j = {{"num_atoms", c.num_atoms}, {"num_simulations", c.num_simulations}, {"c1", c.c1},
       {"c2", c.c2},               {"alpha", c.alpha},                     {"gamma", c.gamma},
       {"discount", c.discount},   {"temperature", c.temperature}};
}

void from_json(const json& j, SearchConfig& c) {
  const SearchConfig d;
  c.num_atoms = j.value("num_atoms", d.num_atoms);
  c.num_simulations = j.value("num_simulations", d.num_simulations);
  c.c1 = j.value("c1", d.c1);
  c.c2 = j.value("c2", d.c2);
  c.alpha = j.value("alpha", d.alpha);
  c.gamma = j.value("gamma", d.gamma);
  c.discount = j.value("discount", d.discount);
  c.temperature = j.value("temperature", d.temperature);
}

void MinMaxStats::update(double q) {
  min_ = std::min(min_, q);
  max_ = std::max(max_, q);
}

double MinMaxStats::normalize(double q) const {
  if (!(max_ > min_)) return 0.0;
  return std::clamp((q - min_) / (max_ - min_), 0.0, 1.0);
}

int SearchResult::total_visits() const { return std::accumulate(visits.begin(), visits.end(), 0); }

json SearchTree::to_json() const {
  json out = json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const SearchNode& n = nodes[i];
    json node{{"id", i},
              {"visits", n.visits},
              {"value", n.value()},
              {"reward", n.reward},
              {"prior", n.prior},
              {"source", n.source},
              {"children", n.children}};
    node["z"] = std::vector<double>(n.z.data(), n.z.data() + n.z.size());
    if (n.visits > 0 && i > 0) node["q"] = q_value(n);
    out.push_back(std::move(node));
  }
  return {{"discount", discount}, {"min_q", minmax.min()}, {"max_q", minmax.max()}, {"nodes", out}};
}

std::vector<Atom> sample_model_atoms(const nn::GmmPolicy& policy, int k, std::mt19937_64& rng) {
  std::vector<Atom> atoms;
  atoms.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) atoms.push_back({nn::gmm_sample(policy, rng), kModelSource});
  return atoms;
}

std::vector<double> normalized_model_prior(std::span<const double> model_log_density) {
  const std::size_t k = model_log_density.size();
  std::vector<double> p(k, 0.0);
  if (k == 0) return p;
  const double m = *std::max_element(model_log_density.begin(), model_log_density.end());
  if (!std::isfinite(m)) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    return p;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(model_log_density[i] - m);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

std::vector<Atom> sample_root_atoms(std::span<const double> observation, const nn::GmmPolicy& policy,
                                    const std::vector<IntentEncoder>& experts, const SearchConfig& cfg,
                                    std::mt19937_64& rng) {
  if (cfg.alpha <= 0.0 || experts.empty()) return sample_model_atoms(policy, cfg.num_atoms, rng);
  std::vector<LatentDistribution> intents;
  for (const IntentEncoder& e : experts) intents.push_back(e.distribution(observation));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(experts.size()) - 1);
  std::vector<Atom> atoms;
  atoms.reserve(static_cast<std::size_t>(cfg.num_atoms));
  for (int i = 0; i < cfg.num_atoms; ++i) {
    if (cfg.alpha >= 1.0 || unit(rng) < cfg.alpha) {
      const int n = pick(rng);
      const LatentDistribution& q = intents[static_cast<std::size_t>(n)];
      atoms.push_back({nn::diag_gaussian_sample(q.mean, q.std, rng), n});
    } else {
      atoms.push_back({nn::gmm_sample(policy, rng), kModelSource});
    }
  }
  return atoms;
}

std::vector<double> adjusted_priors(std::span<const double> model_log_density,
                                    const std::vector<std::vector<double>>& expert_log_density, bool is_root,
                                    double gamma) {
  if (!is_root || gamma <= 0.0 || expert_log_density.empty()) return normalized_model_prior(model_log_density);
  const std::size_t k = model_log_density.size();
  std::vector<double> best(k, -std::numeric_limits<double>::infinity());
  for (const auto& row : expert_log_density) {
    if (row.size() != k) throw std::invalid_argument("adjusted_priors: expert density row has the wrong size");
    for (std::size_t i = 0; i < k; ++i) best[i] = std::max(best[i], row[i]);
  }
  // Mix in linear space after a common shift so neither term under- or overflows.
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    m = std::max(m, best[i]);
    if (gamma < 1.0) m = std::max(m, model_log_density[i]);
  }
  std::vector<double> p(k, 1.0 / static_cast<double>(k));
  if (!std::isfinite(m)) return p;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double v = gamma * std::exp(best[i] - m);
    if (gamma < 1.0) v += (1.0 - gamma) * std::exp(model_log_density[i] - m);
    p[i] = v;
    sum += v;
  }
  if (!(sum > 0.0)) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    return p;
  }
  for (double& x : p) x /= sum;
  return p;
}

double puct_score(const SearchTree& tree, const SearchNode& parent, const SearchNode& child, const SearchConfig& cfg) {
  int sum_visits = 0;
  for (int c : parent.children) sum_visits += tree.nodes[static_cast<std::size_t>(c)].visits;
  const double pb_c = cfg.c1 + std::log((sum_visits + cfg.c2 + 1.0) / cfg.c2);
  // The parent's own count includes its expansion, so it equals sum_visits + 1.
  const double explore = child.prior * pb_c * std::sqrt(static_cast<double>(parent.visits)) / (1.0 + child.visits);
  const double exploit = child.visits > 0 ? tree.minmax.normalize(tree.q_value(child)) : 0.0;
  return exploit + explore;
}

int select_child(const SearchTree& tree, const SearchNode& parent, const SearchConfig& cfg) {
  if (parent.children.empty()) throw std::logic_error("select_child: node is not expanded");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < parent.children.size(); ++i) {
    const double s = puct_score(tree, parent, tree.nodes[static_cast<std::size_t>(parent.children[i])], cfg);
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(i);
    }
  }
  return best;
}

namespace {

void expand(SearchTree& tree, int node, const std::vector<Atom>& atoms, const std::vector<double>& priors) {
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    SearchNode child;
    child.z = atoms[k].z;
    child.source = atoms[k].source;
    child.prior = priors[k];
    tree.nodes.push_back(std::move(child));
    tree.nodes[static_cast<std::size_t>(node)].children.push_back(static_cast<int>(tree.nodes.size()) - 1);
  }
}

void backup(SearchTree& tree, const std::vector<int>& path, double value) {
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    SearchNode& n = tree.nodes[static_cast<std::size_t>(*it)];
    n.value_sum += value;
    n.visits += 1;
    tree.minmax.update(tree.q_value(n));
    value = n.reward + tree.discount * value;
  }
}

std::vector<double> log_densities(const nn::GmmPolicy& policy, const std::vector<Atom>& atoms) {
  std::vector<double> out;
  out.reserve(atoms.size());
  for (const Atom& a : atoms) out.push_back(nn::gmm_log_prob(policy, {a.z.data(), static_cast<std::size_t>(a.z.size())}));
  return out;
}

}  // namespace

SearchResult run_search(std::span<const double> o, const SkillModel& model, const std::vector<IntentEncoder>& experts,
                        const SearchConfig& cfg, std::mt19937_64& rng, const SearchOptions& opts) {
  SearchTree tree;
  tree.discount = cfg.discount;
  tree.nodes.reserve(static_cast<std::size_t>(cfg.num_simulations) * static_cast<std::size_t>(cfg.num_atoms + 1) + 1);

  SearchNode root;
  root.hidden = model.represent(o);
  const PolicyValue root_pv = model.predict(root.hidden);
  tree.nodes.push_back(std::move(root));

  const std::vector<Atom> atoms =
      opts.root_atoms != nullptr ? *opts.root_atoms : sample_root_atoms(o, root_pv.policy, experts, cfg, rng);
  if (atoms.empty()) throw std::invalid_argument("run_search: no root atoms");

  SearchResult result;
  result.atoms = atoms;
  result.model_log_density = log_densities(root_pv.policy, atoms);
  for (const IntentEncoder& e : experts) {
    const LatentDistribution q = e.distribution(o);
    const auto d = static_cast<std::size_t>(q.mean.size());
    std::vector<double> row;
    row.reserve(atoms.size());
    for (const Atom& a : atoms)
      row.push_back(nn::diag_gaussian_log_prob({q.mean.data(), d}, {q.std.data(), d},
                                               {a.z.data(), static_cast<std::size_t>(a.z.size())}));
    result.expert_log_density.push_back(std::move(row));
  }
  result.priors = adjusted_priors(result.model_log_density, result.expert_log_density, true, cfg.gamma);
  expand(tree, 0, atoms, result.priors);
  backup(tree, {0}, root_pv.value);

  std::vector<int> path;
  for (int sim = 1; sim < cfg.num_simulations; ++sim) {
    path.assign(1, 0);
    int node = 0;
    while (tree.nodes[static_cast<std::size_t>(node)].expanded()) {
      const SearchNode& n = tree.nodes[static_cast<std::size_t>(node)];
      node = n.children[static_cast<std::size_t>(select_child(tree, n, cfg))];
      path.push_back(node);
    }
    const int parent = path[path.size() - 2];
    SearchNode& leaf = tree.nodes[static_cast<std::size_t>(node)];
    const RewardState rs = model.dynamics(tree.nodes[static_cast<std::size_t>(parent)].hidden,
                                          {leaf.z.data(), static_cast<std::size_t>(leaf.z.size())});
    leaf.reward = rs.reward;
    leaf.hidden = rs.next;
    const PolicyValue pv = model.predict(leaf.hidden);
    const std::vector<Atom> child_atoms = sample_model_atoms(pv.policy, cfg.num_atoms, rng);
    expand(tree, node, child_atoms, normalized_model_prior(log_densities(pv.policy, child_atoms)));
    backup(tree, path, pv.value);
  }

  const SearchNode& r = tree.nodes.front();
  for (int c : r.children) {
    const SearchNode& child = tree.nodes[static_cast<std::size_t>(c)];
    result.visits.push_back(child.visits);
    result.q_values.push_back(child.visits > 0 ? tree.q_value(child) : 0.0);
  }
  result.root_value = r.value();
  if (opts.tree_out != nullptr) *opts.tree_out = std::move(tree);
  return result;
}

int act(const SearchResult& result, double temperature, std::mt19937_64& rng) {
  if (result.visits.empty()) throw std::invalid_argument("act: no atoms");
  const auto max_it = std::max_element(result.visits.begin(), result.visits.end());
  if (*max_it <= 0) throw std::invalid_argument("act: every atom has zero visits");
  if (temperature <= 0.0) return static_cast<int>(max_it - result.visits.begin());
  const double max_visits = *max_it;
  std::vector<double> w(result.visits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = result.visits[i] > 0 ? std::pow(result.visits[i] / max_visits, 1.0 / temperature) : 0.0;
    sum += w[i];
  }
  const double u = std::uniform_real_distribution<double>(0.0, sum)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc && w[i] > 0.0) return static_cast<int>(i);
  }
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return static_cast<int>(i);
  return 0;
}

SkillExecution execute_skill(DrivingEnv& env, const SkillSpaceModel& skills, std::span<const double> z) {
  SkillExecution ex;
  const std::vector<Action> actions = skills.decode_actions(z, env.ego().v);
  for (const Action& a : actions) {
    if (env.done()) break;
    const StepOutcome out = env.step(a);
    ex.reward += out.reward;
    ++ex.steps;
    ex.log.push_back({env.ego(), a, out.components, out.reward, out.cause});
    if (out.done) {
      ex.done = true;
      ex.cause = out.cause;
      break;
    }
  }
  return ex;
}

}  // namespace emts

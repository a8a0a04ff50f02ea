#include "posmdp/search.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <thread>

#include "posmdp/error.hpp"

namespace posmdp::search {

namespace {

void check(const SearchConfig& cfg) {
  if (cfg.K_d < 1 || cfg.iter_max_MMCS < 1 || cfg.iter_max_MC < 1 || cfg.n_nodes < 1) {
    throw ConfigError("search configuration values must be positive");
  }
  if (!(cfg.mask_frequency_threshold > 0.0)) throw ConfigError("mask threshold must be positive");
}

template <typename Key>
std::pair<int, int> modal(const std::map<Key, std::map<int, int>>& counts, const Key& key) {
  int best = -1, best_count = 0;
  for (const auto& [value, count] : counts.at(key)) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return {best, best_count};
}

void record(SearchResult& res, const policy::JointPolicy& p, double value, bool keep) {
  if (res.trace.empty() || value > res.best_value) {
    res.best_value = value;
    res.best = p;
  }
  res.trace.push_back(res.best_value);
  res.samples.push_back(value);
  if (keep) res.sampled.push_back(p);
}

}  // namespace

std::uint64_t evaluation_seed(std::uint64_t search_seed) { return mix_seed(search_seed, 0xe7a1); }

std::pair<policy::Mask, policy::JointPolicy> create_mask(const std::vector<policy::JointPolicy>& best_k,
                                                         double threshold, std::span<const int> fixed_nodes) {
  if (best_k.empty()) throw ConfigError("create_mask: need at least one policy");
  const std::size_t agents = best_k.front().controllers.size();
  const double K = static_cast<double>(best_k.size());
  policy::Mask mask;
  policy::JointPolicy phi_d = best_k.front();
  mask.agents.resize(agents);
  for (std::size_t i = 0; i < agents; ++i) {
    const auto& ref = best_k.front().controllers[i];
    std::map<std::pair<int, int>, std::map<int, int>> edge_counts;
    std::map<int, std::map<int, int>> label_counts;
    for (const auto& p : best_k) {
      const auto& c = p.controllers[i];
      for (int node = 0; node < c.n_nodes(); ++node) {
        label_counts[node][c.labels[node]] += 1;
        for (int o = 0; o < c.alphabet; ++o) edge_counts[{node, o}][c.next(node, o)] += 1;
      }
    }
    auto& out = phi_d.controllers[i];
    const int first_free = i < fixed_nodes.size() ? fixed_nodes[i] : 0;
    for (int node = 0; node < ref.n_nodes(); ++node) {
      const auto [label, lc] = modal(label_counts, node);
      out.labels[node] = label;
      if (node >= first_free && lc / K >= threshold) mask.agents[i].labels[node] = label;
      for (int o = 0; o < ref.alphabet; ++o) {
        const auto [target, ec] = modal(edge_counts, std::pair<int, int>{node, o});
        out.edge(node, o) = target;
        if (ec / K >= threshold) mask.agents[i].edges[{node, o}] = target;
      }
    }
  }
  return {std::move(mask), std::move(phi_d)};
}

std::vector<double> evaluate_batch(const std::vector<policy::JointPolicy>& batch, const dec::Domain& domain,
                                   const dec::EvalConfig& eval, int threads) {
  std::vector<double> values(batch.size(), 0.0);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t k = first; k < batch.size(); k += stride) {
      values[k] = dec::evaluate_joint_policy(batch[k], domain, eval).mean;
    }
  };
  const int t = std::clamp<int>(threads, 1, std::max<int>(1, static_cast<int>(batch.size())));
  if (t == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < t; ++w) pool.emplace_back(work, w, t);
  }
  return values;
}

SearchResult mmcs(const dec::Domain& domain, const SearchConfig& cfg, std::uint64_t seed) {
  check(cfg);
  const auto tables = dec::successor_tables(domain);
  std::vector<int> fixed_nodes;
  for (const auto& t : tables) fixed_nodes.push_back(static_cast<int>(t.roster.size()));
  dec::EvalConfig eval = cfg.eval;
  eval.seed = evaluation_seed(seed);
  eval.threads = 1;
  Rng rng = make_rng(seed, 1);

  SearchResult res;
  std::vector<Candidate> phi_list;
  std::optional<policy::Mask> mask;  // the first iteration samples without a mask
  for (int it = 0; it < cfg.iter_max_MMCS; ++it) {
    res.masks.push_back(mask.value_or(policy::Mask{}));
    std::vector<policy::JointPolicy> batch;
    for (int j = 0; j < cfg.iter_max_MC; ++j) {
      batch.push_back(policy::sample_joint_policy(tables, cfg.n_nodes, mask ? &*mask : nullptr, rng));
    }
    const auto values = evaluate_batch(batch, domain, eval, cfg.threads);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      record(res, batch[k], values[k], cfg.keep_samples);
      phi_list.push_back(Candidate{std::move(batch[k]), values[k]});
    }
    std::stable_sort(phi_list.begin(), phi_list.end(),
                     [](const Candidate& a, const Candidate& b) { return a.value > b.value; });
    if (static_cast<int>(phi_list.size()) > cfg.K_d) phi_list.resize(cfg.K_d);
    std::vector<policy::JointPolicy> best_k;
    for (const auto& c : phi_list) best_k.push_back(c.policy);
    mask = create_mask(best_k, cfg.mask_frequency_threshold, fixed_nodes).first;
  }
  return res;
}

SearchResult monte_carlo_search(const dec::Domain& domain, int budget, const SearchConfig& cfg,
                                std::uint64_t seed) {
  if (budget < 1) throw ConfigError("monte_carlo_search: budget must be positive");
  const auto tables = dec::successor_tables(domain);
  dec::EvalConfig eval = cfg.eval;
  eval.seed = evaluation_seed(seed);
  eval.threads = 1;
  Rng rng = make_rng(seed, 1);

  SearchResult res;
  // Batches keep memory bounded and let evaluations run in parallel.
  const int chunk = std::max(1, cfg.iter_max_MC);
  for (int done = 0; done < budget;) {
    const int n = std::min(chunk, budget - done);
    std::vector<policy::JointPolicy> batch;
    for (int j = 0; j < n; ++j) batch.push_back(policy::sample_joint_policy(tables, cfg.n_nodes, nullptr, rng));
    const auto values = evaluate_batch(batch, domain, eval, cfg.threads);
    for (int k = 0; k < n; ++k) record(res, batch[k], values[k], cfg.keep_samples);
    done += n;
  }
  return res;
}

}  // namespace posmdp::search

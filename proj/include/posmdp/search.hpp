#pragma once

// Policy search over joint finite-state controllers: Masked Monte Carlo
// Search and the plain Monte Carlo baseline. Every candidate of one search is
// evaluated on the same rollout seeds (common random numbers), so value
// differences between candidates are not rollout noise of unequal streams.

#include <cstdint>
#include <span>
#include <vector>

#include "posmdp/decposmdp.hpp"
#include "posmdp/policy.hpp"

namespace posmdp::search {

struct SearchConfig {
  int K_d = 5;
  int iter_max_MMCS = 4;
  int iter_max_MC = 50;
  int n_nodes = 13;
  dec::EvalConfig eval;               // seed is overwritten per search
  double mask_frequency_threshold = 0.6;  // > 1 disables masking
  int threads = 1;                    // candidate evaluations in parallel
  bool keep_samples = false;          // retain every sampled policy
};

struct Candidate {
  policy::JointPolicy policy;
  double value = 0.0;
};

struct SearchResult {
  policy::JointPolicy best;
  double best_value = 0.0;
  std::vector<double> trace;    // running best after each evaluation
  std::vector<double> samples;  // value of each evaluation in order
  std::vector<policy::JointPolicy> sampled;  // filled when keep_samples
  std::vector<policy::Mask> masks;           // mask in force at each outer iteration
};

/// modal successor of each (node, observation) across `best_k`, ties to the
/// lowest node id; masked when its share reaches `threshold`. Labels of free
/// nodes (index >= fixed_nodes[agent], the roster size) are masked by the same
/// rule. The default policy carries the modal choices.
std::pair<policy::Mask, policy::JointPolicy> create_mask(const std::vector<policy::JointPolicy>& best_k,
                                                         double threshold, std::span<const int> fixed_nodes = {});

SearchResult mmcs(const dec::Domain& domain, const SearchConfig& cfg, std::uint64_t seed);

/// Uniform valid sampling with no mask; `budget` evaluations.
SearchResult monte_carlo_search(const dec::Domain& domain, int budget, const SearchConfig& cfg,
                                std::uint64_t seed);

/// Seed of the common rollout streams for a search seed.
std::uint64_t evaluation_seed(std::uint64_t search_seed);

/// Evaluates candidates in order, in parallel when cfg.threads > 1.
std::vector<double> evaluate_batch(const std::vector<policy::JointPolicy>& batch, const dec::Domain& domain,
                                   const dec::EvalConfig& eval, int threads);

}  // namespace posmdp::search

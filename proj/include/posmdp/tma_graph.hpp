#pragma once

// Task macro-actions (TMAs): a graph of LMA funnels between milestones, the
// undiscounted graph DP that selects one LMA per milestone, and the absorbing
// Markov-chain analytics (success probability, expected completion time).

#include <span>
#include <string>
#include <vector>

#include "posmdp/belief.hpp"
#include "posmdp/rng.hpp"

namespace posmdp::tma {

using belief::BeliefNorm;
using belief::GaussianBelief;
using belief::Lma;
using belief::Milestone;

inline constexpr int kFailureId = 0;

struct GraphEdge {
  int from_id = 0;
  int to_id = 0;
  Lma lma;
  std::vector<double> landing_probs;  // indexed by milestone id, entry 0 is B0
  double reward = 0.0;
  double time = 1.0;
  int sample_count = 0;
};

/// Milestones are stored by id: milestones[id].id == id and milestones[0] is B0.
struct TmaGraph {
  std::vector<Milestone> milestones;
  std::vector<GraphEdge> edges;
  std::vector<std::vector<int>> out_edges;  // edge indices leaving each node
  int goal_id = 1;
  double failure_value = -100.0;

  int size() const { return static_cast<int>(milestones.size()); }
  bool is_absorbing(int id) const { return id == kFailureId || id == goal_id; }

  /// Creates a graph holding only B0.
  static TmaGraph with_failure_node(double failure_value);
  int add_milestone(GaussianBelief center, double epsilon);
  int add_edge(GraphEdge edge);

  /// Checks ids, probability closure and that transient nodes have edges.
  void validate() const;
};

/// Edge index chosen at each node; -1 at absorbing nodes.
using Policy = std::vector<int>;

struct DpSolution {
  std::vector<double> values;
  Policy policy;
  int iterations = 0;
};

struct Tma {
  TmaGraph graph;
  int start_id = 1;
  Policy policy;
  std::vector<double> values;
  std::vector<double> success;
  std::vector<double> time_to_goal;
  std::vector<std::string> availability;
};

struct SamplingConfig {
  int nodes = 10;            // milestones including goal and start singleton
  int neighbors = 4;         // k in k-nearest-neighbour connection
  int sims_per_edge = 100;   // offline LMA rollouts per edge
  double epsilon = 0.1;
  Vector workspace_lo;       // bounds for the sampled state coordinates
  Vector workspace_hi;
  std::vector<int> sample_dims;   // coordinates drawn uniformly; others copy goal_mean
  std::vector<Vector> anchors;    // extra milestone means placed deterministically
  belief::GainSpec gain;
  BeliefNorm norm;
  double failure_value = -100.0;
  long max_steps = 10000;
  double dp_tol = 1e-10;
  int max_sample_attempts = 200;  // per random milestone
  int threads = 1;
};

/// Builds milestones, connects k nearest neighbours, estimates every edge by
/// simulation, solves the graph DP and fills the analytics.
/// Throws GoalUnreachable when success(start) is zero.
Tma construct_tma(const GaussianBelief& start, const Vector& goal_mean,
                  const belief::LinearGaussianModel& model, const SamplingConfig& cfg, Rng& rng);

/// Monte Carlo estimate of an edge's landing distribution, reward and time.
/// Timeouts count as landings in B0.
/// Start beliefs are the center plus Gaussian mean jitter (sigma = epsilon/3)
/// kept inside the ball, or exactly the center for a singleton milestone.
GraphEdge estimate_edge(const Milestone& from, int to_id, const Lma& lma,
                        std::span<const Milestone> stop_regions, int milestone_count,
                        const belief::LinearGaussianModel& model, int sims, long max_steps,
                        const BeliefNorm& norm, bool singleton_start, Rng& rng);

/// Undiscounted value iteration with V(goal) = 0 and V(B0) = failure_value.
/// Greedy ties go to the lowest edge target id.
DpSolution solve_graph_dp(const TmaGraph& graph, double tol = 1e-10, int max_iter = 1000000);

/// Bellman right-hand side R + sum_j P_j V_j of one edge.
double bellman_backup(const TmaGraph& graph, const GraphEdge& edge, const std::vector<double>& values);

/// Absorption probability into the goal under a fixed policy.
std::vector<double> success_probabilities(const TmaGraph& graph, const Policy& policy);

/// Expected accumulated edge time until absorption, (I - P)^-1 T.
std::vector<double> expected_times(const TmaGraph& graph, const Policy& policy);

/// The same quantity, by iterating T <- T_edge + P T from zero.
std::vector<double> expected_times_iterative(const TmaGraph& graph, const Policy& policy,
                                             double tol = 1e-13, int max_iter = 10000000);

/// Exact evaluation of a fixed policy's value equations by a linear solve.
std::vector<double> evaluate_policy_values(const TmaGraph& graph, const Policy& policy);

struct QueryResult {
  int node = 0;
  double value = 0.0;
  double success = 0.0;
  double time = 0.0;
};

/// Nearest milestone to b (ties to the lower id) and its stored analytics.
int nearest_milestone(const TmaGraph& graph, const GaussianBelief& b, const BeliefNorm& norm = {});
QueryResult query_from_belief(const Tma& tma, const GaussianBelief& b, const BeliefNorm& norm = {});

/// A TMA that needs no motion: one edge from a start node to the goal taking
/// `duration` steps, with `fail_prob` mass on B0.
Tma make_fixed_duration_tma(int state_dim, int duration, double step_reward, double fail_prob,
                            double failure_value = -100.0);

/// Solves the DP and fills policy, values, success and time_to_goal.
void finalize_tma(Tma& tma, double dp_tol = 1e-10);

}  // namespace posmdp::tma

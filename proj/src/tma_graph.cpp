#include "posmdp/tma_graph.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "posmdp/error.hpp"

namespace posmdp::tma {

namespace {

// Transient nodes in id order, plus the inverse map (-1 for absorbing nodes).
struct TransientIndex {
  std::vector<int> ids;
  std::vector<int> index_of;
};

TransientIndex transient_index(const TmaGraph& graph) {
  TransientIndex t;
  t.index_of.assign(graph.size(), -1);
  for (int id = 0; id < graph.size(); ++id) {
    if (graph.is_absorbing(id)) continue;
    t.index_of[id] = static_cast<int>(t.ids.size());
    t.ids.push_back(id);
  }
  return t;
}

const GraphEdge& policy_edge(const TmaGraph& graph, const Policy& policy, int id) {
  if (id >= static_cast<int>(policy.size()) || policy[id] < 0 ||
      policy[id] >= static_cast<int>(graph.edges.size())) {
    std::ostringstream msg;
    msg << "policy undefined at transient node " << id;
    throw NoOutgoingEdge(msg.str());
  }
  return graph.edges[policy[id]];
}

// (I - P_TT) for the policy-induced chain.
Matrix absorption_matrix(const TmaGraph& graph, const Policy& policy, const TransientIndex& t) {
  const int n = static_cast<int>(t.ids.size());
  Matrix M = Matrix::Identity(n, n);
  for (int r = 0; r < n; ++r) {
    const GraphEdge& e = policy_edge(graph, policy, t.ids[r]);
    for (int j = 0; j < graph.size(); ++j) {
      if (t.index_of[j] >= 0) M(r, t.index_of[j]) -= e.landing_probs[j];
    }
  }
  return M;
}

Vector solve_chain(const Matrix& M, const Vector& rhs) {
  Eigen::FullPivLU<Matrix> lu(M);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw SingularChain("absorbing-chain system is singular: a closed transient class never absorbs");
  }
  return lu.solve(rhs);
}

double mean_distance(const Milestone& a, const Milestone& b) {
  return (a.center.mean - b.center.mean).norm();
}

}  // namespace

TmaGraph TmaGraph::with_failure_node(double failure_value) {
  TmaGraph g;
  g.milestones.push_back(Milestone{kFailureId, {}, 0.0});
  g.out_edges.emplace_back();
  g.failure_value = failure_value;
  return g;
}

int TmaGraph::add_milestone(GaussianBelief center, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("milestone epsilon must be positive");
  const int id = size();
  milestones.push_back(Milestone{id, std::move(center), epsilon});
  out_edges.emplace_back();
  return id;
}

int TmaGraph::add_edge(GraphEdge edge) {
  if (edge.from_id <= 0 || edge.from_id >= size() || edge.to_id <= 0 || edge.to_id >= size()) {
    throw ConfigError("edge endpoints must be existing non-failure milestones");
  }
  const int idx = static_cast<int>(edges.size());
  out_edges[edge.from_id].push_back(idx);
  edges.push_back(std::move(edge));
  return idx;
}

void TmaGraph::validate() const {
  if (milestones.empty() || !milestones[0].is_failure()) throw ConfigError("graph must start with B0");
  if (goal_id <= 0 || goal_id >= size()) throw ConfigError("goal_id not present in graph");
  for (int id = 0; id < size(); ++id) {
    if (milestones[id].id != id) throw ConfigError("milestone ids must equal their index");
    if (id > 0 && !(milestones[id].epsilon > 0.0)) throw ConfigError("milestone epsilon must be positive");
  }
  for (const GraphEdge& e : edges) {
    if (static_cast<int>(e.landing_probs.size()) != size()) {
      throw ConfigError("edge landing_probs must cover every milestone");
    }
    double total = 0.0;
    for (double p : e.landing_probs) {
      if (p < 0.0) throw ConfigError("edge landing probability is negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("edge landing probabilities must sum to 1");
    if (!(e.time > 0.0)) throw ConfigError("edge time must be positive");
  }
  for (int id = 1; id < size(); ++id) {
    if (!is_absorbing(id) && out_edges[id].empty()) {
      std::ostringstream msg;
      msg << "node " << id << " has no outgoing LMA";
      throw NoOutgoingEdge(msg.str());
    }
  }
}

GraphEdge estimate_edge(const Milestone& from, int to_id, const Lma& lma,
                        std::span<const Milestone> stop_regions, int milestone_count,
                        const belief::LinearGaussianModel& model, int sims, long max_steps,
                        const BeliefNorm& norm, bool singleton_start, Rng& rng) {
  if (sims < 1) throw ConfigError("estimate_edge: need at least one simulation");
  GraphEdge edge;
  edge.from_id = from.id;
  edge.to_id = to_id;
  edge.lma = lma;
  edge.sample_count = sims;

  std::vector<long> counts(milestone_count, 0);
  double reward_sum = 0.0;
  double time_sum = 0.0;
  long settled = 0;
  double timeout_reward_sum = 0.0;
  std::normal_distribution<double> jitter(0.0, from.epsilon / 3.0);

  for (int s = 0; s < sims; ++s) {
    GaussianBelief b = from.center;
    if (!singleton_start) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        GaussianBelief cand = from.center;
        for (int i = 0; i < cand.mean.size(); ++i) cand.mean[i] += jitter(rng);
        if (norm.distance(cand, from.center) <= from.epsilon) {
          b = std::move(cand);
          break;
        }
      }
    }
    belief::SimState sim{belief::sample_from_belief(b, rng), b, 0, 0.0};
    const auto rec = belief::run_lma(lma, sim, stop_regions, model, max_steps, rng, norm);
    counts[rec.landed_region_id] += 1;
    if (rec.outcome == belief::Outcome::Timeout) {
      timeout_reward_sum += rec.accrued_reward;
    } else {
      reward_sum += rec.accrued_reward;
      time_sum += static_cast<double>(rec.elapsed_steps);
      ++settled;
    }
  }

  edge.landing_probs.resize(milestone_count);
  for (int j = 0; j < milestone_count; ++j) {
    edge.landing_probs[j] = static_cast<double>(counts[j]) / sims;
  }
  if (settled > 0) {
    edge.reward = reward_sum / settled;
    edge.time = time_sum / settled;
  } else {
    edge.reward = timeout_reward_sum / sims;
    edge.time = static_cast<double>(max_steps);
  }
  // Every executed LMA takes at least one step.
  edge.time = std::max(edge.time, 1.0);
  return edge;
}

double bellman_backup(const TmaGraph& graph, const GraphEdge& edge, const std::vector<double>& values) {
  double q = edge.reward;
  for (int j = 0; j < graph.size(); ++j) q += edge.landing_probs[j] * values[j];
  return q;
}

DpSolution solve_graph_dp(const TmaGraph& graph, double tol, int max_iter) {
  graph.validate();
  const int n = graph.size();
  // Transient values start at the failure value so that cost-free cycles
  // which never absorb are not mistaken for reaching the goal.
  std::vector<double> V(n, graph.failure_value);
  V[graph.goal_id] = 0.0;
  std::vector<double> next = V;

  DpSolution sol;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    double change = 0.0;
    for (int i = 1; i < n; ++i) {
      if (graph.is_absorbing(i)) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (int e : graph.out_edges[i]) best = std::max(best, bellman_backup(graph, graph.edges[e], V));
      next[i] = best;
      change = std::max(change, std::abs(best - V[i]));
    }
    V.swap(next);
    sol.iterations = it + 1;
    if (change <= tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NonConvergent("solve_graph_dp: value iteration did not converge");

  // Greedy extraction. Among edges within round-off of the best backup the
  // lowest target id wins, except that a node only takes an edge with mass on
  // nodes already settled (absorbing, or decided in an earlier sweep). With
  // cost-free ties this keeps the selected chain absorbing.
  std::vector<std::vector<int>> tied(n);
  for (int i = 1; i < n; ++i) {
    if (graph.is_absorbing(i)) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int e : graph.out_edges[i]) best = std::max(best, bellman_backup(graph, graph.edges[e], V));
    const double slack = 1e-12 * std::max(1.0, std::abs(best));
    for (int e : graph.out_edges[i]) {
      if (bellman_backup(graph, graph.edges[e], V) >= best - slack) tied[i].push_back(e);
    }
    std::stable_sort(tied[i].begin(), tied[i].end(),
                     [&](int a, int b) { return graph.edges[a].to_id < graph.edges[b].to_id; });
  }
  sol.policy.assign(n, -1);
  std::vector<char> settled(n, 0);
  settled[kFailureId] = settled[graph.goal_id] = 1;
  for (bool progress = true; progress;) {
    progress = false;
    const std::vector<char> before = settled;
    for (int i = 1; i < n; ++i) {
      if (settled[i]) continue;
      for (int e : tied[i]) {
        double mass = 0.0;
        for (int j = 0; j < n; ++j) {
          if (before[j]) mass += graph.edges[e].landing_probs[j];
        }
        if (mass > 0.0) {
          sol.policy[i] = e;
          settled[i] = 1;
          progress = true;
          break;
        }
      }
    }
  }
  for (int i = 1; i < n; ++i) {
    if (!settled[i]) sol.policy[i] = tied[i].front();
  }
  sol.values = std::move(V);
  return sol;
}

std::vector<double> success_probabilities(const TmaGraph& graph, const Policy& policy) {
  const TransientIndex t = transient_index(graph);
  std::vector<double> h(graph.size(), 0.0);
  h[graph.goal_id] = 1.0;
  if (t.ids.empty()) return h;
  const Matrix M = absorption_matrix(graph, policy, t);
  Vector rhs(static_cast<int>(t.ids.size()));
  for (int r = 0; r < rhs.size(); ++r) {
    rhs[r] = policy_edge(graph, policy, t.ids[r]).landing_probs[graph.goal_id];
  }
  const Vector x = solve_chain(M, rhs);
  for (int r = 0; r < x.size(); ++r) h[t.ids[r]] = std::clamp(x[r], 0.0, 1.0);
  return h;
}

std::vector<double> expected_times(const TmaGraph& graph, const Policy& policy) {
  const TransientIndex t = transient_index(graph);
  std::vector<double> T(graph.size(), 0.0);
  if (t.ids.empty()) return T;
  const Matrix M = absorption_matrix(graph, policy, t);
  Vector rhs(static_cast<int>(t.ids.size()));
  for (int r = 0; r < rhs.size(); ++r) rhs[r] = policy_edge(graph, policy, t.ids[r]).time;
  const Vector x = solve_chain(M, rhs);
  for (int r = 0; r < x.size(); ++r) T[t.ids[r]] = x[r];
  return T;
}

std::vector<double> expected_times_iterative(const TmaGraph& graph, const Policy& policy,
                                             double tol, int max_iter) {
  const TransientIndex t = transient_index(graph);
  std::vector<double> T(graph.size(), 0.0);
  std::vector<double> next = T;
  for (int it = 0; it < max_iter; ++it) {
    double change = 0.0;
    for (int id : t.ids) {
      const GraphEdge& e = policy_edge(graph, policy, id);
      double v = e.time;
      for (int j : t.ids) v += e.landing_probs[j] * T[j];
      next[id] = v;
      change = std::max(change, std::abs(v - T[id]));
    }
    T.swap(next);
    if (change <= tol * std::max(1.0, *std::max_element(T.begin(), T.end()))) return T;
  }
  throw NonConvergent("expected_times_iterative: recursion did not converge");
}

std::vector<double> evaluate_policy_values(const TmaGraph& graph, const Policy& policy) {
  const TransientIndex t = transient_index(graph);
  std::vector<double> V(graph.size(), 0.0);
  V[kFailureId] = graph.failure_value;
  if (t.ids.empty()) return V;
  const Matrix M = absorption_matrix(graph, policy, t);
  Vector rhs(static_cast<int>(t.ids.size()));
  for (int r = 0; r < rhs.size(); ++r) {
    const GraphEdge& e = policy_edge(graph, policy, t.ids[r]);
    rhs[r] = e.reward + e.landing_probs[kFailureId] * graph.failure_value;
  }
  const Vector x = solve_chain(M, rhs);
  for (int r = 0; r < x.size(); ++r) V[t.ids[r]] = x[r];
  return V;
}

int nearest_milestone(const TmaGraph& graph, const GaussianBelief& b, const BeliefNorm& norm) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int id = 1; id < graph.size(); ++id) {
    const double d = norm.distance(b, graph.milestones[id].center);
    if (d < best_d) {
      best = id;
      best_d = d;
    }
  }
  if (best < 0) throw ConfigError("nearest_milestone: graph has no milestones");
  return best;
}

QueryResult query_from_belief(const Tma& tma, const GaussianBelief& b, const BeliefNorm& norm) {
  if (!b.mean.allFinite() || !b.cov.allFinite()) throw ConfigError("query_from_belief: belief not finite");
  QueryResult q;
  q.node = nearest_milestone(tma.graph, b, norm);
  q.value = tma.values[q.node];
  q.success = tma.success[q.node];
  q.time = tma.time_to_goal[q.node];
  return q;
}

void finalize_tma(Tma& tma, double dp_tol) {
  DpSolution dp = solve_graph_dp(tma.graph, dp_tol);
  tma.policy = std::move(dp.policy);
  tma.values = std::move(dp.values);
  tma.success = success_probabilities(tma.graph, tma.policy);
  tma.time_to_goal = expected_times(tma.graph, tma.policy);
}

Tma make_fixed_duration_tma(int state_dim, int duration, double step_reward, double fail_prob,
                            double failure_value) {
  if (duration < 1) throw ConfigError("fixed-duration TMA needs duration >= 1");
  if (fail_prob < 0.0 || fail_prob >= 1.0) throw ConfigError("fail_prob must lie in [0, 1)");
  Tma tma;
  tma.graph = TmaGraph::with_failure_node(failure_value);
  const GaussianBelief here{Vector::Zero(state_dim), Matrix::Zero(state_dim, state_dim)};
  tma.graph.goal_id = tma.graph.add_milestone(here, 1.0);
  tma.start_id = tma.graph.add_milestone(here, 1.0);

  GraphEdge e;
  e.from_id = tma.start_id;
  e.to_id = tma.graph.goal_id;
  e.lma.params = belief::LmaParams{Matrix::Zero(0, state_dim), Vector::Zero(state_dim)};
  e.lma.kalman_gain = Matrix::Zero(state_dim, 0);
  e.lma.attractor = here;
  e.landing_probs = {fail_prob, 1.0 - fail_prob, 0.0};
  e.reward = step_reward * duration;
  e.time = duration;
  e.sample_count = 1;
  tma.graph.add_edge(std::move(e));
  finalize_tma(tma);
  return tma;
}

Tma construct_tma(const GaussianBelief& start, const Vector& goal_mean,
                  const belief::LinearGaussianModel& model, const SamplingConfig& cfg, Rng& rng) {
  if (cfg.nodes < 2) throw ConfigError("construct_tma: need at least 2 nodes");
  if (cfg.neighbors < 1) throw ConfigError("construct_tma: need at least 1 neighbour");
  if (cfg.sims_per_edge < 1) throw ConfigError("construct_tma: need at least 1 simulation per edge");
  const int n = model.state_dim();
  if (goal_mean.size() != n || start.mean.size() != n) throw ConfigError("construct_tma: dimension mismatch");
  if (!cfg.sample_dims.empty() &&
      (cfg.workspace_lo.size() != static_cast<int>(cfg.sample_dims.size()) ||
       cfg.workspace_hi.size() != static_cast<int>(cfg.sample_dims.size()))) {
    throw ConfigError("construct_tma: workspace bounds must match sample_dims");
  }

  const Matrix P = belief::stationary_covariance(model);
  const Matrix L = belief::design_lma(model, goal_mean, cfg.gain).params.gain;

  Tma tma;
  TmaGraph& g = tma.graph;
  g = TmaGraph::with_failure_node(cfg.failure_value);
  g.goal_id = g.add_milestone(GaussianBelief{goal_mean, P}, cfg.epsilon);

  auto separated = [&](const Vector& mean) {
    for (int id = 1; id < g.size(); ++id) {
      if ((g.milestones[id].center.mean - mean).norm() <= cfg.epsilon) return false;
    }
    return true;
  };
  for (const Vector& a : cfg.anchors) {
    if (a.size() != n) throw ConfigError("construct_tma: anchor dimension mismatch");
    if (!model.violates(a) && separated(a)) g.add_milestone(GaussianBelief{a, P}, cfg.epsilon);
  }
  const int random_nodes = cfg.nodes - 2;
  for (int k = 0; k < random_nodes && !cfg.sample_dims.empty(); ++k) {
    for (int attempt = 0; attempt < cfg.max_sample_attempts; ++attempt) {
      Vector mean = goal_mean;
      for (std::size_t d = 0; d < cfg.sample_dims.size(); ++d) {
        std::uniform_real_distribution<double> U(cfg.workspace_lo[d], cfg.workspace_hi[d]);
        mean[cfg.sample_dims[d]] = U(rng);
      }
      if (model.violates(mean) || !separated(mean)) continue;
      g.add_milestone(GaussianBelief{mean, P}, cfg.epsilon);
      break;
    }
  }
  const bool start_is_goal = g.milestones[g.goal_id].contains(start, cfg.norm);
  tma.start_id = start_is_goal ? g.goal_id : g.add_milestone(start, cfg.epsilon);

  // Connect every transient node to its k nearest neighbours. The start
  // singleton is a source only.
  std::vector<std::pair<int, int>> pairs;
  for (int i = 1; i < g.size(); ++i) {
    if (g.is_absorbing(i)) continue;
    std::vector<int> cand;
    for (int j = 1; j < g.size(); ++j) {
      if (j != i && !(j == tma.start_id && !start_is_goal)) cand.push_back(j);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
      return mean_distance(g.milestones[i], g.milestones[a]) < mean_distance(g.milestones[i], g.milestones[b]);
    });
    const int k = std::min<int>(cfg.neighbors, static_cast<int>(cand.size()));
    for (int c = 0; c < k; ++c) pairs.emplace_back(i, cand[c]);
  }

  std::vector<Lma> lmas(g.size());
  for (int id = 1; id < g.size(); ++id) lmas[id] = belief::make_lma(model, g.milestones[id].center.mean, L, P);

  const std::uint64_t base_seed = rng();
  std::vector<GraphEdge> built(pairs.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t e = first; e < pairs.size(); e += stride) {
      const auto [from, to] = pairs[e];
      std::vector<Milestone> stops;
      for (int id = 1; id < g.size(); ++id) {
        if (id != from && !(id == tma.start_id && !start_is_goal)) stops.push_back(g.milestones[id]);
      }
      Rng edge_rng = make_rng(base_seed, e);
      built[e] = estimate_edge(g.milestones[from], to, lmas[to], stops, g.size(), model,
                               cfg.sims_per_edge, cfg.max_steps, cfg.norm,
                               from == tma.start_id && !start_is_goal, edge_rng);
    }
  };
  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (GraphEdge& e : built) g.add_edge(std::move(e));

  finalize_tma(tma, cfg.dp_tol);
  if (!(tma.success[tma.start_id] > 0.0)) {
    throw GoalUnreachable("construct_tma: goal unreachable from the start belief");
  }
  return tma;
}

}  // namespace posmdp::tma

#include <doctest.h>

#include <cmath>

#include "chain_fixtures.hpp"
#include "posmdp/error.hpp"
#include "posmdp/json_io.hpp"
#include "posmdp/model_spec.hpp"
#include "posmdp/tma_graph.hpp"

using namespace posmdp;
using namespace posmdp::tma;
using fixtures::edge;
using fixtures::line_graph;

namespace {

Vector v1(double v) { return Vector::Constant(1, v); }
Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

Policy only_edges(const TmaGraph& g) {
  Policy p(g.size(), -1);
  for (int i = 0; i < g.size(); ++i) {
    if (!g.is_absorbing(i) && !g.out_edges[i].empty()) p[i] = g.out_edges[i].front();
  }
  return p;
}

SamplingConfig scalar_sampling(int nodes) {
  SamplingConfig cfg;
  cfg.nodes = nodes;
  cfg.neighbors = 2;
  cfg.sims_per_edge = 1000;
  cfg.epsilon = 0.1;
  cfg.workspace_lo = v1(-1.0);
  cfg.workspace_hi = v1(1.0);
  cfg.sample_dims = {0};
  cfg.gain = belief::LqrGain{m1(1.0), m1(1.0)};
  cfg.max_steps = 500;
  return cfg;
}

}  // namespace

TEST_CASE("one-step DP by hand") {
  TmaGraph g = line_graph(1);
  g.add_edge(edge(2, 1, {0.1, 0.9, 0.0}, -1.0));
  const DpSolution dp = solve_graph_dp(g);
  // -1 + 0.9 * 0 + 0.1 * (-100)
  CHECK(dp.values[2] == doctest::Approx(-11.0).epsilon(1e-12));
  CHECK(dp.values[1] == 0.0);
  CHECK(dp.values[0] == -100.0);
  CHECK(dp.policy[2] == 0);
}

TEST_CASE("zero rewards and no failure mass give the zero value") {
  TmaGraph g = line_graph(3);
  g.add_edge(edge(2, 3, {0.0, 0.0, 0.0, 1.0, 0.0}, 0.0));
  g.add_edge(edge(3, 1, {0.0, 1.0, 0.0, 0.0, 0.0}, 0.0));
  g.add_edge(edge(4, 2, {0.0, 0.0, 0.5, 0.0, 0.5}, 0.0));
  g.add_edge(edge(4, 1, {0.0, 0.5, 0.0, 0.0, 0.5}, 0.0));
  const DpSolution dp = solve_graph_dp(g);
  for (int i = 1; i < g.size(); ++i) CHECK(dp.values[i] == doctest::Approx(0.0));
}

TEST_CASE("greedy ties go to the lowest target id") {
  TmaGraph g = line_graph(2);
  // Edge 0 targets node 3, edge 1 targets the goal; both have the same RHS.
  g.add_edge(edge(2, 3, {0.0, 1.0, 0.0, 0.0}, -1.0));
  g.add_edge(edge(2, 1, {0.0, 1.0, 0.0, 0.0}, -1.0));
  g.add_edge(edge(3, 1, {0.0, 1.0, 0.0, 0.0}, -1.0));
  const DpSolution dp = solve_graph_dp(g);
  CHECK(dp.policy[2] == 1);
}

TEST_CASE("value iteration agrees with the policy-evaluation linear solve on 5-node graphs") {
  Rng rng = make_rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const TmaGraph g = fixtures::random_graph(rng, 5, 3);
    const DpSolution dp = solve_graph_dp(g, 1e-12);
    const auto exact = evaluate_policy_values(g, dp.policy);
    for (int i = 0; i < g.size(); ++i) CHECK(std::abs(dp.values[i] - exact[i]) <= 1e-8);
    for (int i = 2; i < g.size(); ++i) {
      const double chosen = bellman_backup(g, g.edges[dp.policy[i]], dp.values);
      for (int e : g.out_edges[i]) CHECK(bellman_backup(g, g.edges[e], dp.values) <= chosen + 1e-10);
    }
  }
}

TEST_CASE("less negative failure value never lowers any node value") {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    TmaGraph g = fixtures::random_graph(rng, 7, 3);
    g.failure_value = -200.0;
    const auto low = solve_graph_dp(g).values;
    g.failure_value = -10.0;
    const auto high = solve_graph_dp(g).values;
    for (int i = 1; i < g.size(); ++i) CHECK(high[i] >= low[i] - 1e-9);
  }
}

TEST_CASE("absorption probabilities in closed form") {
  SUBCASE("self loop with half the mass on the goal absorbs surely") {
    TmaGraph g = line_graph(1);
    g.add_edge(edge(2, 1, {0.0, 0.5, 0.5}, -1.0, 2.0));
    const Policy p = only_edges(g);
    CHECK(success_probabilities(g, p)[2] == doctest::Approx(1.0).epsilon(1e-12));
    // Geometric number of hops with mean 2, each taking 2 steps.
    CHECK(expected_times(g, p)[2] == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("goal 0.4, failure 0.1, self 0.5") {
    TmaGraph g = line_graph(1);
    g.add_edge(edge(2, 1, {0.1, 0.4, 0.5}, -1.0));
    const auto h = success_probabilities(g, only_edges(g));
    CHECK(h[2] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(h[1] == 1.0);
    CHECK(h[0] == 0.0);
  }
  SUBCASE("a closed transient class is reported") {
    TmaGraph g = line_graph(2);
    g.add_edge(edge(2, 3, {0.0, 0.0, 0.0, 1.0}, -1.0));
    g.add_edge(edge(3, 2, {0.0, 0.0, 1.0, 0.0}, -1.0));
    CHECK_THROWS_AS(success_probabilities(g, only_edges(g)), SingularChain);
    CHECK_THROWS_AS(expected_times(g, only_edges(g)), SingularChain);
  }
}

TEST_CASE("matrix and iterative completion times agree") {
  Rng rng = make_rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 3 + uniform_index(rng, 18);
    const TmaGraph g = fixtures::random_graph(rng, n, 2);
    const Policy p = solve_graph_dp(g).policy;
    const auto direct = expected_times(g, p);
    const auto iter = expected_times_iterative(g, p);
    for (int i = 0; i < n; ++i) CHECK(std::abs(direct[i] - iter[i]) <= 1e-9 * std::max(1.0, direct[i]));
  }
}

TEST_CASE("analytics agree with simulated chain rollouts") {
  Rng rng = make_rng(123);
  for (int trial = 0; trial < 3; ++trial) {
    const TmaGraph g = fixtures::random_graph(rng, 10, 2, 0.2);
    const Policy p = solve_graph_dp(g).policy;
    const auto h = success_probabilities(g, p);
    const auto T = expected_times(g, p);
    Rng sim = make_rng(7, trial);
    const auto est = fixtures::simulate_chain(g, p, g.size() - 1, 20000, sim);
    CHECK(std::abs(est.success - h[g.size() - 1]) <= 3.0 * est.success_se);
    CHECK(std::abs(est.time - T[g.size() - 1]) <= 3.0 * est.time_se);
  }
}

TEST_CASE("graph validation errors") {
  TmaGraph g = line_graph(2);
  g.add_edge(edge(2, 1, {0.0, 1.0, 0.0, 0.0}, -1.0));
  CHECK_THROWS_AS(solve_graph_dp(g), NoOutgoingEdge);
  g.add_edge(edge(3, 1, {0.0, 0.5, 0.0, 0.0}, -1.0));
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(g.add_milestone(fixtures::point(0.0), 0.0), ConfigError);
}

TEST_CASE("deterministic funnel lands on its target with certainty") {
  belief::LinearGaussianModel model(m1(1.0), m1(1.0), m1(1.0), m1(0.0), m1(1e-12));
  const Matrix P = belief::stationary_covariance(model);
  const belief::Milestone from{2, {v1(0.0), P}, 0.05};
  const std::vector<belief::Milestone> stops{belief::Milestone{1, {v1(1.0), P}, 0.05}};
  const auto lma = belief::make_lma(model, v1(1.0), m1(0.5), P);
  Rng rng = make_rng(4);
  const GraphEdge e = estimate_edge(from, 1, lma, stops, 3, model, 50, 1000, {}, false, rng);
  CHECK(e.landing_probs == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(e.sample_count == 50);
  CHECK(e.time >= 1.0);
}

TEST_CASE("a wall across the funnel sends the mass to B0") {
  auto spec = scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4);
  spec.constraints.obstacles.push_back(Box{v1(0.4), v1(0.6)});
  const auto model = spec.build();
  const Matrix P = belief::stationary_covariance(model);
  const belief::Milestone from{2, {v1(0.0), P}, 0.05};
  const std::vector<belief::Milestone> stops{belief::Milestone{1, {v1(1.0), P}, 0.05}};
  // Slow gain: steps of about 0.1 cannot jump the 0.2-wide wall.
  const auto lma = belief::make_lma(model, v1(1.0), m1(0.1), P);
  Rng rng = make_rng(5);
  const GraphEdge e = estimate_edge(from, 1, lma, stops, 3, model, 500, 1000, {}, false, rng);
  CHECK(e.landing_probs[0] >= 0.95);
}

TEST_CASE("edge frequencies agree with a high-count oracle") {
  const auto model = scalar_model_spec(1.0, 1.0, 1.0, 0.0025, 0.0025).build();
  const Matrix P = belief::stationary_covariance(model);
  const belief::Milestone from{3, {v1(0.0), P}, 0.1};
  const std::vector<belief::Milestone> stops{belief::Milestone{1, {v1(1.0), P}, 0.1},
                                             belief::Milestone{2, {v1(0.55), P}, 0.1}};
  const auto lma = belief::make_lma(model, v1(1.0), m1(0.45), P);

  Rng oracle_rng = make_rng(1000);
  const int big = 100000;
  double mid = 0.0;
  for (int k = 0; k < big; ++k) {
    belief::SimState s{belief::sample_from_belief(from.center, oracle_rng), from.center, 0, 0.0};
    mid += belief::run_lma(lma, s, stops, model, 1000, oracle_rng).landed_region_id == 2;
  }
  const double p = mid / big;
  REQUIRE(p > 0.05);
  REQUIRE(p < 0.95);

  Rng rng = make_rng(2000);
  const int m = 1000;
  const GraphEdge e = estimate_edge(from, 1, lma, stops, 4, model, m, 1000, {}, true, rng);
  CHECK(std::abs(e.landing_probs[2] - p) <= 3.0 * std::sqrt(p * (1.0 - p) / m));
}

TEST_CASE("two-node scalar TMA") {
  const auto model = scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4).build();
  const Matrix P = belief::stationary_covariance(model);
  Rng rng = make_rng(17);
  const Tma t = construct_tma({v1(-0.8), P}, v1(0.8), model, scalar_sampling(2), rng);
  REQUIRE(t.graph.size() == 3);
  CHECK(t.start_id == 2);
  CHECK(t.policy[t.start_id] == 0);
  CHECK(t.success[t.start_id] >= 0.99);
  CHECK(t.success[t.graph.goal_id] == 1.0);
  CHECK(t.time_to_goal[t.graph.goal_id] == 0.0);
}

TEST_CASE("start inside the goal ball needs no time") {
  const auto model = scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4).build();
  const Matrix P = belief::stationary_covariance(model);
  Rng rng = make_rng(3);
  const Tma t = construct_tma({v1(0.5), P}, v1(0.5), model, scalar_sampling(2), rng);
  CHECK(t.start_id == t.graph.goal_id);
  CHECK(t.time_to_goal[t.start_id] == 0.0);
  CHECK(t.success[t.start_id] == 1.0);
}

TEST_CASE("fully blocked workspace is unreachable") {
  auto spec = scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4);
  spec.constraints.everywhere = true;
  const auto model = spec.build();
  const Matrix P = belief::stationary_covariance(model);
  Rng rng = make_rng(3);
  CHECK_THROWS_AS(construct_tma({v1(-0.8), P}, v1(0.8), model, scalar_sampling(4), rng), GoalUnreachable);
}

TEST_CASE("sampled scalar roadmap") {
  const auto model = scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4).build();
  const Matrix P = belief::stationary_covariance(model);
  auto cfg = scalar_sampling(6);
  cfg.sims_per_edge = 100;
  Rng rng = make_rng(21);
  const Tma t = construct_tma({v1(-0.9), P}, v1(0.9), model, cfg, rng);
  t.graph.validate();
  CHECK(t.graph.milestones.back().id == t.start_id);
  for (const auto& e : t.graph.edges) {
    CHECK(e.to_id != t.start_id);
    CHECK(e.from_id != t.graph.goal_id);
  }
  for (int i = 0; i < t.graph.size(); ++i) {
    CHECK(t.success[i] >= 0.0);
    CHECK(t.success[i] <= 1.0);
    CHECK(t.time_to_goal[i] >= 0.0);
  }

  SUBCASE("edge estimation is independent of the thread count") {
    cfg.threads = 3;
    Rng again = make_rng(21);
    const Tma u = construct_tma({v1(-0.9), P}, v1(0.9), model, cfg, again);
    CHECK(io::to_json(u).dump() == io::to_json(t).dump());
  }
  SUBCASE("queries") {
    const auto q = query_from_belief(t, t.graph.milestones[t.graph.goal_id].center);
    CHECK(q.node == t.graph.goal_id);
    CHECK(q.value == t.values[t.graph.goal_id]);
    for (double x = -1.0; x <= 1.0; x += 0.05) {
      const auto r = query_from_belief(t, {v1(x), P});
      CHECK(r.success >= 0.0);
      CHECK(r.success <= 1.0);
      CHECK(r.time >= 0.0);
    }
  }
  SUBCASE("serialization round-trips bit-exactly") {
    const Tma back = io::tma_from_json(io::Json::parse(io::to_json(t).dump()));
    CHECK(back.success == t.success);
    CHECK(back.values == t.values);
    CHECK(back.time_to_goal == t.time_to_goal);
    CHECK(back.policy == t.policy);
    CHECK(io::to_json(back).dump() == io::to_json(t).dump());
  }
}

TEST_CASE("query ties go to the lower milestone id") {
  TmaGraph g = line_graph(2);  // nodes at 0 (goal), 1, 2
  g.add_edge(edge(2, 1, {0.0, 1.0, 0.0, 0.0}, -1.0));
  g.add_edge(edge(3, 2, {0.0, 0.0, 1.0, 0.0}, -1.0));
  Tma t;
  t.graph = g;
  t.start_id = 3;
  finalize_tma(t);
  CHECK(query_from_belief(t, fixtures::point(1.5)).node == 2);
  CHECK(query_from_belief(t, fixtures::point(0.5)).node == 1);
}

TEST_CASE("fixed-duration TMA") {
  const Tma t = make_fixed_duration_tma(2, 3, -0.01, 0.0);
  CHECK(t.success[t.start_id] == 1.0);
  CHECK(t.time_to_goal[t.start_id] == doctest::Approx(3.0));
  CHECK(t.values[t.start_id] == doctest::Approx(-0.03));
  const Tma risky = make_fixed_duration_tma(2, 3, -0.01, 0.25);
  CHECK(risky.success[risky.start_id] == doctest::Approx(0.75));
  CHECK_THROWS_AS(make_fixed_duration_tma(2, 0, 0.0, 0.0), ConfigError);
}

#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>

#include "posmdp/error.hpp"
#include "posmdp/json_io.hpp"
#include "posmdp/policy.hpp"
#include "posmdp/search.hpp"
#include "posmdp/table_domain.hpp"

using namespace posmdp;
using policy::BigInt;
using policy::PolicyController;

namespace {

policy::SuccessorTable all_compatible(int roster_size, int alphabet) {
  std::vector<int> roster;
  for (int t = 0; t < roster_size; ++t) roster.push_back(t);
  return policy::build_successor_table(roster, alphabet, [](int, int, int) { return true; });
}

// Brute-force oracle: every label assignment of the free nodes times every
// edge table, kept when the standalone validator accepts it.
long brute_force_count(const policy::SuccessorTable& table, int n_nodes) {
  const int R = static_cast<int>(table.roster.size());
  const int F = n_nodes - R;
  const int slots = n_nodes * table.alphabet;
  long label_combos = 1, edge_combos = 1;
  for (int k = 0; k < F; ++k) label_combos *= R;
  for (int k = 0; k < slots; ++k) edge_combos *= n_nodes;
  long valid = 0;
  for (long l = 0; l < label_combos; ++l) {
    PolicyController c;
    c.alphabet = table.alphabet;
    c.labels = table.roster;
    long code = l;
    for (int k = 0; k < F; ++k, code /= R) c.labels.push_back(table.roster[code % R]);
    c.edges.assign(slots, 0);
    for (long e = 0; e < edge_combos; ++e) {
      long ec = e;
      for (int s = 0; s < slots; ++s, ec /= n_nodes) c.edges[s] = static_cast<int>(ec % n_nodes);
      if (policy::validate_controller(c, table).empty()) ++valid;
    }
  }
  return valid;
}

dec::TableDomain toy() { return dec::TableDomain::from_json(io::read_json_file("configs/toy_domain.json")); }

PolicyController controller(std::vector<int> labels, int alphabet, std::vector<int> edges) {
  PolicyController c;
  c.labels = std::move(labels);
  c.alphabet = alphabet;
  c.edges = std::move(edges);
  return c;
}

policy::JointPolicy single(PolicyController c) { return policy::JointPolicy{{std::move(c)}}; }

}  // namespace

TEST_CASE("singleton policy space") {
  const auto table = all_compatible(1, 1);
  CHECK(policy::controller_space_cardinality(1, table) == 1);
  Rng rng = make_rng(0, 0);
  const auto c = policy::sample_valid_controller(table, 1, nullptr, rng);
  CHECK(c.labels == std::vector<int>{0});
  CHECK(c.edges == std::vector<int>{0});
  int visits = 0;
  policy::enumerate_controllers(table, 1, [&](const PolicyController& e) {
    ++visits;
    CHECK(e == c);
  });
  CHECK(visits == 1);
}

TEST_CASE("cardinality matches brute-force enumeration") {
  // 2 identity nodes, 2 TMAs, 1 observation: every edge has 2 choices.
  CHECK(policy::controller_space_cardinality(2, all_compatible(2, 1)) == 4);
  CHECK(brute_force_count(all_compatible(2, 1), 2) == 4);

  Rng rng = make_rng(21, 0);
  for (int trial = 0; trial < 12; ++trial) {
    const int R = 1 + uniform_index(rng, 3);
    const int alphabet = 1 + uniform_index(rng, 2);
    const int n_nodes = R + uniform_index(rng, 2);
    if (n_nodes * alphabet > 6) continue;  // keep the oracle small
    std::map<std::tuple<int, int, int>, bool> compat;
    std::vector<int> roster;
    for (int t = 0; t < R; ++t) roster.push_back(t);
    for (int p = 0; p < R; ++p) {
      for (int o = 0; o < alphabet; ++o) {
        bool any = false;
        for (int q = 0; q < R; ++q) any |= (compat[{p, o, q}] = uniform01(rng) < 0.6);
        if (!any) compat[{p, o, uniform_index(rng, R)}] = true;
      }
    }
    const auto table =
        policy::build_successor_table(roster, alphabet, [&](int p, int o, int q) { return compat[{p, o, q}]; });
    long enumerated = 0;
    policy::enumerate_controllers(table, n_nodes, [&](const PolicyController& c) {
      ++enumerated;
      CHECK(policy::validate_controller(c, table).empty());
    });
    const long oracle = brute_force_count(table, n_nodes);
    CHECK(enumerated == oracle);
    CHECK(policy::controller_space_cardinality(n_nodes, table) == oracle);
  }
  // Joint space is the product.
  const std::vector<policy::SuccessorTable> tables{all_compatible(2, 1), all_compatible(1, 2)};
  CHECK(policy::controller_space_cardinality(2, tables) ==
        policy::controller_space_cardinality(2, tables[0]) * policy::controller_space_cardinality(2, tables[1]));
  CHECK_THROWS_AS(policy::controller_space_cardinality(1, all_compatible(2, 1)), ConfigError);
}

TEST_CASE("successor tables reject dead ends") {
  CHECK_THROWS_AS(policy::build_successor_table({0, 1}, 2, [](int p, int o, int) { return !(p == 1 && o == 0); }),
                  NoValidSuccessor);
}

TEST_CASE("uniform edge sampling") {
  // Roster {0, 1}; after TMA 0 only 0 and 1 may follow, after 1 only 1.
  const auto table = policy::build_successor_table({0, 1}, 1, [](int p, int, int q) { return p == 0 || q == 1; });
  Rng rng = make_rng(3, 0);
  const int n = 10000;
  int hits = 0;
  for (int k = 0; k < n; ++k) {
    const auto c = policy::sample_valid_controller(table, 2, nullptr, rng);
    CHECK(policy::validate_controller(c, table).empty());
    hits += c.next(0, 0) == 0;
    CHECK(c.next(1, 0) == 1);
  }
  CHECK(std::abs(hits / double(n) - 0.5) <= 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("validator catches broken controllers") {
  const auto table = policy::build_successor_table({0, 1}, 1, [](int p, int, int q) { return p == 0 || q == 1; });
  CHECK(policy::validate_controller(controller({0, 1}, 1, {0, 1}), table).empty());
  CHECK_FALSE(policy::validate_controller(controller({0, 1}, 1, {0, 0}), table).empty());  // 1 -> 0 invalid
  CHECK_FALSE(policy::validate_controller(controller({1, 0}, 1, {0, 1}), table).empty());  // identity relabelled
  CHECK_FALSE(policy::validate_controller(controller({0, 1}, 1, {0, 2}), table).empty());  // out of range
  CHECK_FALSE(policy::validate_controller(controller({0, 1}, 2, {0, 1, 1, 1}), table).empty());
}

TEST_CASE("create_mask fixtures") {
  SUBCASE("K = 1 masks every transition") {
    const auto p = single(controller({0, 1, 2, 1}, 2, {0, 1, 2, 0, 1, 3, 3, 2}));
    const auto [mask, phi] = search::create_mask({p}, 1.0);
    CHECK(mask.agents[0].edges.size() == 8);
    CHECK(mask.agents[0].labels.size() == 4);
    CHECK(phi == p);
  }
  SUBCASE("two policies disagreeing everywhere") {
    const auto a = single(controller({0, 1, 2}, 1, {0, 1, 2}));
    const auto b = single(controller({0, 1, 2}, 1, {1, 2, 0}));
    const int fixed[] = {3};
    const auto [mask, phi] = search::create_mask({a, b}, 0.6, fixed);
    CHECK(mask.agents[0].empty());
    CHECK(phi.controllers[0].edges == std::vector<int>{0, 1, 0});  // modal ties go to the lowest node
  }
  SUBCASE("three policies agreeing on exactly one transition") {
    const auto a = single(controller({0, 1, 2}, 1, {2, 0, 1}));
    const auto b = single(controller({0, 1, 2}, 1, {2, 1, 2}));
    const auto c = single(controller({0, 1, 2}, 1, {2, 2, 0}));
    const int fixed[] = {3};
    const auto [mask, phi] = search::create_mask({a, b, c}, 0.6, fixed);
    CHECK(mask.agents[0].labels.empty());
    REQUIRE(mask.agents[0].edges.size() == 1);
    CHECK(mask.agents[0].edges.begin()->first == std::pair<int, int>{0, 0});
    CHECK(mask.agents[0].edges.begin()->second == 2);
  }
  SUBCASE("free-node label majority") {
    const auto a = single(controller({0, 1, 1}, 1, {0, 0, 0}));
    const auto b = single(controller({0, 1, 1}, 1, {0, 1, 2}));
    const auto c = single(controller({0, 1, 0}, 1, {1, 1, 2}));
    const int fixed[] = {2};
    const auto [mask, phi] = search::create_mask({a, b, c}, 0.6, fixed);
    CHECK(mask.agents[0].labels == std::map<int, int>{{2, 1}});
    CHECK(mask.agents[0].edges == std::map<std::pair<int, int>, int>{{{0, 0}, 0}, {{1, 0}, 1}, {{2, 0}, 2}});
  }
}

TEST_CASE("a full mask reproduces the default policy") {
  auto d = toy();
  const auto tables = dec::successor_tables(d);
  Rng rng = make_rng(8, 0);
  for (int k = 0; k < 20; ++k) {
    const auto p = policy::sample_joint_policy(tables, 4, nullptr, rng);
    const auto [mask, phi] = search::create_mask({p}, 0.6);
    CHECK(phi == p);
    for (int j = 0; j < 5; ++j) CHECK(policy::sample_joint_policy(tables, 4, &mask, rng) == phi);
  }
}

TEST_CASE("toy domain has an enumerable joint space") {
  auto d = toy();
  const auto tables = dec::successor_tables(d);
  // Worker: 3 identity nodes; the 3 "empty" edges have 2 targets and the 3
  // "ready" edges must go to Collect, so 8.
  // Helper: free node is Prepare or Collect; either way 3 edges have 2 targets
  // and 3 have 1, so 2 * 8 = 16.
  const BigInt card = policy::controller_space_cardinality(3, tables);
  CHECK(card == 128);
  long n = 0;
  policy::enumerate_joint_policies(tables, 3, [&](const policy::JointPolicy& p) {
    ++n;
    CHECK(policy::validate_joint_policy(p, tables).empty());
  });
  CHECK(n == 128);
}

TEST_CASE("search traces, masks and the exhaustive optimum") {
  auto d = toy();
  const auto tables = dec::successor_tables(d);
  search::SearchConfig cfg;
  cfg.n_nodes = 3;
  cfg.eval = d.defaults().eval;
  cfg.K_d = 3;
  cfg.iter_max_MMCS = 8;
  cfg.iter_max_MC = 25;
  cfg.keep_samples = true;
  const std::uint64_t seed = 4;

  // Exhaustive oracle on the same common rollout streams.
  dec::EvalConfig eval = cfg.eval;
  eval.seed = search::evaluation_seed(seed);
  double best = -1e300, best_se = 0.0;
  policy::enumerate_joint_policies(tables, 3, [&](const policy::JointPolicy& p) {
    const auto r = dec::evaluate_joint_policy(p, d, eval);
    if (r.mean > best) {
      best = r.mean;
      best_se = r.std_error;
    }
  });
  REQUIRE(best > 0.0);

  const auto m = search::mmcs(d, cfg, seed);
  CHECK(m.trace.size() == 200);
  CHECK(m.samples.size() == 200);
  CHECK(m.masks.size() == 8);
  CHECK(m.masks.front().agents.empty());
  for (std::size_t k = 1; k < m.trace.size(); ++k) CHECK(m.trace[k] >= m.trace[k - 1]);
  CHECK(m.best_value == m.trace.back());
  CHECK(std::abs(m.best_value - best) <= 3.0 * best_se);
  CHECK(policy::validate_joint_policy(m.best, tables).empty());
  // With no free nodes a masked edge is always copied verbatim.
  for (int it = 1; it < cfg.iter_max_MMCS; ++it) {
    const auto& mask = m.masks[it];
    for (int j = 0; j < cfg.iter_max_MC; ++j) {
      const auto& p = m.sampled[it * cfg.iter_max_MC + j];
      for (std::size_t i = 0; i < mask.agents.size(); ++i) {
        for (const auto& [key, target] : mask.agents[i].edges) {
          CHECK(p.controllers[i].next(key.first, key.second) == target);
        }
      }
    }
  }

  const auto mc = search::monte_carlo_search(d, 1000, cfg, seed);
  CHECK(mc.trace.size() == 1000);
  for (std::size_t k = 1; k < mc.trace.size(); ++k) CHECK(mc.trace[k] >= mc.trace[k - 1]);
  CHECK(mc.best_value == doctest::Approx(best).epsilon(1e-12));

  const auto one = search::monte_carlo_search(d, 1, cfg, seed);
  CHECK(one.trace.size() == 1);
  CHECK(one.best == one.sampled.front());

  // Same seed, same result.
  const auto again = search::mmcs(d, cfg, seed);
  CHECK(again.trace == m.trace);
  CHECK(again.best == m.best);
  search::SearchConfig threaded = cfg;
  threaded.threads = 3;
  CHECK(search::mmcs(d, threaded, seed).samples == m.samples);
}

TEST_CASE("a mask that never fires leaves the sampling distribution unchanged") {
  auto d = toy();
  search::SearchConfig cfg;
  cfg.n_nodes = 4;  // one free worker node so labels are sampled too
  cfg.eval.n_rollouts = 1;
  cfg.eval.horizon = 2;
  cfg.K_d = 5;
  cfg.iter_max_MMCS = 20;
  cfg.iter_max_MC = 500;
  cfg.mask_frequency_threshold = 1.5;
  cfg.keep_samples = true;
  const auto m = search::mmcs(d, cfg, 1);
  for (const auto& mask : m.masks) {
    for (const auto& a : mask.agents) CHECK(a.empty());
  }
  const auto mc = search::monte_carlo_search(d, 10000, cfg, 2);
  REQUIRE(m.sampled.size() == 10000);
  REQUIRE(mc.sampled.size() == 10000);

  // Chi-square homogeneity test on the worker's free-node label and on the
  // target of one edge, MMCS samples against MC samples.
  auto test = [&](auto category, int k) {
    std::vector<double> a(k, 0.0), b(k, 0.0);
    for (const auto& p : m.sampled) a[category(p)] += 1;
    for (const auto& p : mc.sampled) b[category(p)] += 1;
    double chi2 = 0.0;
    int dof = -1;
    for (int c = 0; c < k; ++c) {
      const double total = a[c] + b[c];
      if (total == 0) continue;
      ++dof;
      const double expected = total / 2.0;
      chi2 += (a[c] - expected) * (a[c] - expected) / expected + (b[c] - expected) * (b[c] - expected) / expected;
    }
    REQUIRE(dof >= 1);
    boost::math::chi_squared dist(dof);
    return 1.0 - boost::math::cdf(dist, chi2);
  };
  CHECK(test([](const policy::JointPolicy& p) { return p.controllers[0].labels[3]; }, 3) > 0.01);
  CHECK(test([](const policy::JointPolicy& p) { return p.controllers[0].next(0, 0); }, 4) > 0.01);
  CHECK(test([](const policy::JointPolicy& p) { return p.controllers[0].next(3, 1); }, 4) > 0.01);
}

TEST_CASE("policy files round-trip") {
  auto d = toy();
  const auto tables = dec::successor_tables(d);
  Rng rng = make_rng(6, 0);
  const auto p = policy::sample_joint_policy(tables, 5, nullptr, rng);
  const auto j = policy::to_json(p, d.tma_names());
  CHECK(j.at("format") == "posmdp.policy");
  CHECK(policy::joint_policy_from_json(nlohmann::json::parse(j.dump())) == p);
}

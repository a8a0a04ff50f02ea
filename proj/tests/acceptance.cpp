// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 if any fails.
// Run from the source directory (configs/ is read relative to it).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chain_fixtures.hpp"
#include "posmdp/belief.hpp"
#include "posmdp/delivery.hpp"
#include "posmdp/harness.hpp"
#include "posmdp/json_io.hpp"
#include "posmdp/model_spec.hpp"
#include "posmdp/search.hpp"
#include "posmdp/table_domain.hpp"

using namespace posmdp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

tma::Policy random_policy(const tma::TmaGraph& g, Rng& rng) {
  tma::Policy p(g.size(), -1);
  std::vector<std::vector<int>> outs(g.size());
  for (int e = 0; e < static_cast<int>(g.edges.size()); ++e) outs[g.edges[e].from_id].push_back(e);
  for (int i = 0; i < g.size(); ++i) {
    if (!outs[i].empty()) p[i] = outs[i][uniform_index(rng, static_cast<int>(outs[i].size()))];
  }
  return p;
}

// 1. Completion times by the matrix solve against plain fixed-point iteration.
Verdict completion_times() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(101);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int n = 3 + uniform_index(rng, 18);  // 3..20 nodes
    const auto g = fixtures::random_graph(rng, n, 3);
    const auto p = random_policy(g, rng);
    const auto a = tma::expected_times(g, p);
    const auto b = tma::expected_times_iterative(g, p);
    for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 1.0, "max |diff| " + fmt(worst) + ", " + fmt(t) + " s"};
}

// 2. Absorption probability and completion time against simulated chains.
Verdict analytics_vs_simulation() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(202);
  double worst_z = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int n = 4 + uniform_index(rng, 7);
    const auto g = fixtures::random_graph(rng, n, 3);
    const auto p = random_policy(g, rng);
    const int start = n - 1;
    const auto s = tma::success_probabilities(g, p);
    const auto t = tma::expected_times(g, p);
    const auto est = fixtures::simulate_chain(g, p, start, 100000, rng);
    worst_z = std::max(worst_z, std::abs(est.success - s[start]) / est.success_se);
    worst_z = std::max(worst_z, std::abs(est.time - t[start]) / est.time_se);
  }
  const double t = seconds_since(t0);
  return {worst_z <= 3.0 && t < 30.0, "max |z| " + fmt(worst_z) + ", " + fmt(t) + " s"};
}

// 3. Value iteration against exact evaluation of every deterministic policy.
Verdict dp_correctness() {
  Rng rng = make_rng(303);
  double worst_eval = 0.0, worst_deviation = -1e300, worst_opt = 0.0;
  long policies = 0;
  for (int k = 0; k < 50; ++k) {
    const auto g = fixtures::random_graph(rng, 5, 3);
    const auto dp = tma::solve_graph_dp(g, 1e-13);
    const auto exact = tma::evaluate_policy_values(g, dp.policy);
    for (int i = 0; i < g.size(); ++i) worst_eval = std::max(worst_eval, std::abs(dp.values[i] - exact[i]));
    for (const auto& e : g.edges) {
      worst_deviation = std::max(worst_deviation, tma::bellman_backup(g, e, exact) - exact[e.from_id]);
    }
    // Exhaustive: the best enumerated policy value at every node matches the DP.
    std::vector<std::vector<int>> outs(g.size());
    for (int e = 0; e < static_cast<int>(g.edges.size()); ++e) outs[g.edges[e].from_id].push_back(e);
    std::vector<double> best(g.size(), -1e300);
    std::function<void(int, tma::Policy&)> rec = [&](int node, tma::Policy& p) {
      if (node == g.size()) {
        ++policies;
        const auto v = tma::evaluate_policy_values(g, p);
        for (int i = 0; i < g.size(); ++i) best[i] = std::max(best[i], v[i]);
        return;
      }
      if (outs[node].empty()) {
        rec(node + 1, p);
        return;
      }
      for (int e : outs[node]) {
        p[node] = e;
        rec(node + 1, p);
      }
    };
    tma::Policy p(g.size(), -1);
    rec(0, p);
    for (int i = 0; i < g.size(); ++i) worst_opt = std::max(worst_opt, std::abs(best[i] - dp.values[i]));
  }
  const bool pass = worst_eval <= 1e-8 && worst_deviation <= 1e-8 && worst_opt <= 1e-8;
  return {pass, "max |VI - solve| " + fmt(worst_eval) + ", best deviation gain " + fmt(worst_deviation) +
                    ", max |enumerated optimum - VI| " + fmt(worst_opt) + " over " + std::to_string(policies) +
                    " policies"};
}

// Posterior-covariance Riccati map written out independently of the library.
Matrix riccati_oracle(const belief::LinearGaussianModel& m, const Matrix& P) {
  const Matrix prior = m.A() * P * m.A().transpose() + m.Q();
  const Matrix S = m.C() * prior * m.C().transpose() + m.R_obs();
  const Matrix K = prior * m.C().transpose() * S.inverse();
  const Matrix I = Matrix::Identity(P.rows(), P.cols());
  const Matrix post = (I - K * m.C()) * prior;
  return 0.5 * (post + post.transpose());
}

// 4. Riccati fixed point and funnel landing for the scalar and planar models.
Verdict riccati_and_funnel() {
  struct Case {
    std::string name;
    ModelSpec spec;
    Vector start, target;
    double epsilon;
  };
  const auto air = delivery::DeliveryConfig::defaults().air;
  std::vector<Case> cases;
  cases.push_back({"scalar", scalar_model_spec(1.0, 1.0, 1.0, 1e-4, 1e-4), Vector::Constant(1, -0.8),
                   Vector::Constant(1, 0.8), 0.1});
  Vector s2(2), t2(2), s4 = Vector::Zero(4), t4 = Vector::Zero(4);
  s2 << 0.1, 0.1;
  t2 << 0.9, 0.9;
  s4.head(2) = s2;
  t4.head(2) = t2;
  cases.push_back({"single integrator", single_integrator_2d(air.dt, air.process_var, air.obs_var), s2, t2, 0.05});
  cases.push_back({"double integrator", double_integrator_2d(air.dt, air.process_var, air.obs_var), s4, t4, 0.05});

  bool pass = true;
  std::ostringstream detail;
  for (const auto& c : cases) {
    const auto model = c.spec.build();
    const Matrix P = belief::stationary_covariance(model);
    const double lib = (belief::riccati_step(model, P) - P).cwiseAbs().maxCoeff();
    const double oracle = (riccati_oracle(model, P) - P).cwiseAbs().maxCoeff();
    const int n = model.state_dim(), m = model.control_dim();
    const auto lma = belief::design_lma(model, c.target, belief::LqrGain{Matrix::Identity(n, n), Matrix::Identity(m, m)});
    const std::vector<belief::Milestone> regions{belief::Milestone{1, {c.target, P}, c.epsilon}};
    Rng rng = make_rng(404);
    int landed = 0;
    for (int k = 0; k < 1000; ++k) {
      const belief::GaussianBelief b{c.start, P};
      const belief::SimState s{belief::sample_from_belief(b, rng), b, 0, 0.0};
      const auto rec = belief::run_lma(lma, s, regions, model, 10000, rng);
      landed += rec.outcome == belief::Outcome::Landed && rec.landed_region_id == 1;
    }
    pass = pass && lib <= 1e-9 && oracle <= 1e-9 && landed >= 990;
    detail << c.name << ": residual " << fmt(std::max(lib, oracle)) << ", landed " << landed << "/1000; ";
  }
  return {pass, detail.str()};
}

// 5. Macro-level and primitive-level discounted sums on every rollout.
Verdict value_identity() {
  double worst = 0.0;
  long rollouts = 0;
  auto probe = [&](const dec::Domain& d, int n_nodes, dec::EvalConfig eval, int policies, std::uint64_t seed) {
    const auto tables = dec::successor_tables(d);
    Rng rng = make_rng(seed);
    for (int k = 0; k < policies; ++k) {
      const auto p = policy::sample_joint_policy(tables, n_nodes, nullptr, rng);
      eval.seed = seed * 1000 + k;
      const auto r = dec::evaluate_joint_policy(p, d, eval);
      worst = std::max(worst, r.max_identity_gap);
      rollouts += eval.n_rollouts;
    }
  };
  const auto toy = harness::load_domain("configs/toy_domain.json");
  probe(*toy.domain, toy.search.n_nodes, toy.search.eval, 20, 1);
  const auto desk = harness::load_domain("configs/package_delivery.json");
  probe(*desk.domain, desk.search.n_nodes, desk.search.eval, 10, 2);
  delivery::DeliveryConfig cfg = delivery::DeliveryConfig::from_json(io::read_json_file("configs/package_delivery.json"));
  cfg.primitive_execution = true;
  const delivery::DeliveryDomain primitive(cfg);
  dec::EvalConfig eval = primitive.eval_defaults();
  eval.n_rollouts = 10;
  probe(primitive, cfg.n_nodes, eval, 3, 3);
  return {worst <= 1e-9, "max gap " + fmt(worst) + " over " + std::to_string(rollouts) + " rollouts"};
}

// 6. Two agents with deterministic 3- and 9-step TMAs.
Verdict asynchrony() {
  const nlohmann::json j = {
      {"format", "posmdp.domain"},
      {"e_states", {"idle"}},
      {"tmas",
       {{{"name", "Fast"}, {"fixed", {{"duration", 3}, {"step_reward", -1.0}}}},
        {{"name", "Slow"}, {"fixed", {{"duration", 9}, {"step_reward", -1.0}}}}}},
      {"agents", {{{"name", "a"}, {"roster", {"Fast"}}}, {{"name", "b"}, {"roster", {"Slow"}}}}},
      {"gamma", 1.0}};
  const auto d = dec::TableDomain::from_json(j);
  Rng rng = make_rng(6);
  dec::JointConfig c = d.initial(rng);
  const int both[] = {0, 1};
  const auto s1 = dec::advance_joint(c, both, d, rng);
  const int fast_only[] = {0, -1};
  const auto s2 = dec::advance_joint(c, fast_only, d, rng);
  const auto s3 = dec::advance_joint(c, fast_only, d, rng);
  const bool first = s1.tau_min == 3 && s1.terminated == std::vector<int>{0} && s1.observations.size() == 1 &&
                     s1.observations.count(0) == 1 && c.status.size() == 2;
  const bool second = s2.tau_min == 3 && s2.terminated == std::vector<int>{0} && s2.observations.size() == 1;
  const bool third = s3.tau_min == 3 && s3.terminated == std::vector<int>{0, 1} && s3.observations.size() == 2 &&
                     c.clock == 9;
  return {first && second && third, "tau " + std::to_string(s1.tau_min) + "/" + std::to_string(s2.tau_min) + "/" +
                                        std::to_string(s3.tau_min) + ", clock " + std::to_string(c.clock)};
}

struct Comparison {
  std::vector<search::SearchResult> mmcs, mc;
  double seconds = 0.0;
};

const Comparison& desk_comparison() {
  static const Comparison cmp = [] {
    Comparison c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto ld = harness::load_domain("configs/package_delivery.json");
    const search::SearchConfig cfg = harness::with_budget(ld.search, 200);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      c.mmcs.push_back(search::mmcs(*ld.domain, cfg, seed));
      c.mc.push_back(search::monte_carlo_search(*ld.domain, 200, cfg, seed));
    }
    c.seconds = seconds_since(t0);
    return c;
  }();
  return cmp;
}

// 7. Paired MMCS / MC searches on the package desk.
Verdict mmcs_vs_mc() {
  const auto& c = desk_comparison();
  int wins = 0;
  std::vector<double> improvement;
  for (std::size_t k = 0; k < c.mmcs.size(); ++k) {
    const double m = c.mmcs[k].best_value, b = c.mc[k].best_value;
    wins += m >= b;
    improvement.push_back((m - b) / std::max(std::abs(b), 1e-12));
  }
  std::sort(improvement.begin(), improvement.end());
  const double median = 0.5 * (improvement[9] + improvement[10]);
  const bool pass = wins >= 16 && median >= 0.25 && c.seconds < 600.0 && c.mmcs.front().trace.size() == 200;
  return {pass, "MMCS >= MC in " + std::to_string(wins) + "/20 seeds, median improvement " + fmt(100 * median) +
                    "%, " + fmt(c.seconds) + " s"};
}

// 8. Success curves of the best policy each method found over the 20 searches.
Verdict success_curves() {
  const auto& c = desk_comparison();
  auto best_of = [](const std::vector<search::SearchResult>& rs) {
    return *std::max_element(rs.begin(), rs.end(),
                             [](const auto& a, const auto& b) { return a.best_value < b.best_value; });
  };
  const auto ld = harness::load_domain("configs/package_delivery.json");
  dec::EvalConfig eval = ld.search.eval;
  eval.n_rollouts = 250;
  eval.seed = 7777;
  auto curve_of = [&](const policy::JointPolicy& p) {
    const auto r = dec::evaluate_joint_policy(p, *ld.domain, eval);
    return harness::success_curve(r.metrics);
  };
  auto at = [](const std::vector<double>& curve, std::size_t k) { return k < curve.size() ? curve[k] : 0.0; };
  auto non_increasing = [](const std::vector<double>& curve) {
    for (std::size_t k = 1; k < curve.size(); ++k) {
      if (curve[k] > curve[k - 1]) return false;
    }
    return !curve.empty() && curve[0] == 1.0;
  };
  const auto m = curve_of(best_of(c.mmcs).best);
  const auto b = curve_of(best_of(c.mc).best);
  const double m3 = at(m, 3), b3 = at(b, 3);
  const bool pass = m3 >= 0.2 && b3 < 0.05 && non_increasing(m) && non_increasing(b);
  return {pass, "P(>=3): MMCS " + fmt(m3) + ", MC " + fmt(b3)};
}

// 9. Toy domain small enough to enumerate every joint policy.
Verdict small_space_optimum() {
  const auto ld = harness::load_domain("configs/toy_domain.json");
  const auto tables = dec::successor_tables(*ld.domain);
  search::SearchConfig cfg = ld.search;
  cfg.iter_max_MMCS = 10;
  cfg.iter_max_MC = 50;
  const std::uint64_t seed = 9;
  dec::EvalConfig eval = cfg.eval;
  eval.seed = search::evaluation_seed(seed);
  long count = 0;
  double best = -1e300, se = 0.0;
  policy::enumerate_joint_policies(tables, cfg.n_nodes, [&](const policy::JointPolicy& p) {
    ++count;
    const auto r = dec::evaluate_joint_policy(p, *ld.domain, eval);
    if (r.mean > best) {
      best = r.mean;
      se = r.std_error;
    }
  });
  const auto r = search::mmcs(*ld.domain, cfg, seed);
  const bool pass = count <= 200 && std::abs(r.best_value - best) <= 3.0 * se;
  return {pass, std::to_string(count) + " joint policies, optimum " + fmt(best, 6) + " (se " + fmt(se) +
                    "), MMCS " + fmt(r.best_value, 6)};
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && (e.path().extension() == ".csv" || e.path().filename() == "tma.json")) {
      files[fs::relative(e.path(), dir).string()] = io::read_text_file(e.path());
    }
  }
  return files;
}

// 10. Every command twice with the same seed; outputs compared byte for byte.
Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "posmdp_acceptance";
  fs::remove_all(root);
  struct Run {
    std::string cmd;
    harness::Options opts;
  };
  std::vector<Run> runs;
  auto make = [&](const std::string& cmd, const std::string& config) {
    harness::Options o;
    o.config = config;
    o.seed = 42;
    return Run{cmd, o};
  };
  runs.push_back(make("build-tma", "configs/scalar_tma.json"));
  runs.push_back(make("build-tma", "configs/air_vehicle_tma.json"));
  runs.push_back(make("solve", "configs/toy_domain.json"));
  runs.push_back(make("mc-baseline", "configs/toy_domain.json"));
  Run cmp = make("compare-search", "configs/toy_domain.json");
  cmp.opts.seeds = 3;
  runs.push_back(cmp);
  Run desk = make("solve", "configs/package_delivery.json");
  desk.opts.budget = 40;
  runs.push_back(desk);
  Run curve = make("success-curve", "configs/package_delivery.json");
  curve.opts.runs = 50;
  runs.push_back(curve);

  int identical = 0, compared = 0;
  std::string failure;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    Run& r = runs[k];
    if (r.cmd == "success-curve") r.opts.policy = root / "5" / "a" / "policy.json";  // from the desk solve
    std::map<std::string, std::string> outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      harness::Options o = r.opts;
      o.out = root / std::to_string(k) / (rep == 0 ? "a" : "b");
      o.threads = rep == 0 ? 1 : 2;
      std::ostringstream log;
      if (harness::run_command(r.cmd, o, log) != harness::kOk) {
        failure += r.cmd + " failed: " + log.str();
      }
      outputs[rep] = csv_files(o.out);
    }
    for (const auto& [name, text] : outputs[0]) {
      ++compared;
      const auto it = outputs[1].find(name);
      if (it != outputs[1].end() && it->second == text) {
        ++identical;
      } else {
        failure += r.cmd + ":" + name + " differs; ";
      }
    }
  }
  const bool pass = failure.empty() && compared == identical && compared > 0;
  return {pass, std::to_string(identical) + "/" + std::to_string(compared) + " files identical " + failure};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"matrix-form completion times match iteration", completion_times},
      {"graph analytics match simulated chains", analytics_vs_simulation},
      {"graph DP matches exact policy evaluation", dp_correctness},
      {"Riccati fixed point and funnel landing", riccati_and_funnel},
      {"macro and primitive discounted sums agree", value_identity},
      {"asynchronous termination of 3- and 9-step TMAs", asynchrony},
      {"MMCS beats MC on the package desk", mmcs_vs_mc},
      {"success curves of MMCS and MC policies", success_curves},
      {"MMCS finds the enumerated optimum", small_space_optimum},
      {"reruns give byte-identical outputs", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

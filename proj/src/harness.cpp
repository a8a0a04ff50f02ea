#include "posmdp/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

#include "posmdp/delivery.hpp"
#include "posmdp/error.hpp"
#include "posmdp/json_io.hpp"
#include "posmdp/table_domain.hpp"

namespace posmdp::harness {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_search_block(const json& j, search::SearchConfig& cfg) {
  if (!j.contains("search")) return;
  const json& s = j["search"];
  cfg.K_d = io::value_or(s, "K_d", cfg.K_d);
  cfg.iter_max_MMCS = io::value_or(s, "iter_max_MMCS", cfg.iter_max_MMCS);
  cfg.iter_max_MC = io::value_or(s, "iter_max_MC", cfg.iter_max_MC);
  cfg.mask_frequency_threshold = io::value_or(s, "mask_frequency_threshold", cfg.mask_frequency_threshold);
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

json report_header(const std::string& command, std::uint64_t seed, const std::string& hash) {
  return json{{"command", command}, {"seed", seed}, {"config_hash", hash}};
}

void write_report(const fs::path& out, json report, const Timer& t) {
  report["wall_time_s"] = t.seconds();
  io::write_text_file(out / "report.json", report.dump(2) + "\n");
}

policy::JointPolicy load_policy(const fs::path& path, const LoadedDomain& ld) {
  if (path.empty()) throw ConfigError("--policy is required");
  policy::JointPolicy p = policy::joint_policy_from_json(io::read_json_file(path));
  const std::string err = policy::validate_joint_policy(p, dec::successor_tables(*ld.domain));
  if (!err.empty()) throw ConfigError("policy does not fit the domain: " + err);
  return p;
}

void write_search(const fs::path& dir, const std::string& prefix, const search::SearchResult& r,
                  const LoadedDomain& ld) {
  io::write_text_file(dir / (prefix + "trace.csv"), trace_csv(r.trace));
  io::write_text_file(dir / (prefix + "samples.csv"), trace_csv(r.samples));
  io::write_text_file(dir / (prefix + "policy.json"), policy::to_json(r.best, ld.tma_names).dump(1) + "\n");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_build_tma(const Options& o, std::ostream& log) {
  Timer t;
  if (o.config.empty()) throw ConfigError("--config is required");
  const std::string text = io::read_text_file(o.config);
  const json j = io::read_json_file(o.config);
  json cfg = j;
  if (o.seed) cfg["seed"] = *o.seed;
  const tma::Tma tma = build_tma(cfg);
  const fs::path file = o.out / "tma.json";
  io::save_tma(tma, file);
  const int s = tma.start_id;
  log << "success(start) " << format_double(tma.success[s]) << ", time " << format_double(tma.time_to_goal[s])
      << " steps, " << tma.graph.size() << " milestones -> " << file.string() << "\n";
  json report = report_header("build-tma", cfg.value("seed", std::uint64_t{0}), io::fnv1a_hex(text));
  report["success_start"] = tma.success[s];
  report["time_to_goal_start"] = tma.time_to_goal[s];
  report["value_start"] = tma.values[s];
  report["milestones"] = tma.graph.size();
  write_report(o.out, report, t);
  return kOk;
}

int cmd_search(const Options& o, std::ostream& log, bool masked) {
  Timer t;
  const LoadedDomain ld = load_domain(o.config);
  search::SearchConfig cfg = with_budget(ld.search, o.budget);
  cfg.threads = o.threads;
  const std::uint64_t seed = o.seed.value_or(0);
  const int budget = cfg.iter_max_MMCS * cfg.iter_max_MC;
  const search::SearchResult r =
      masked ? search::mmcs(*ld.domain, cfg, seed) : search::monte_carlo_search(*ld.domain, budget, cfg, seed);
  write_search(o.out, "", r, ld);
  log << (masked ? "MMCS" : "MC") << " best value " << format_double(r.best_value) << " after " << r.trace.size()
      << " evaluations\n";
  json report = report_header(masked ? "solve" : "mc-baseline", seed, ld.config_hash);
  report["budget"] = budget;
  report["best_value"] = r.best_value;
  report["n_nodes"] = cfg.n_nodes;
  write_report(o.out, report, t);
  return kOk;
}

int cmd_compare(const Options& o, std::ostream& log) {
  Timer t;
  if (o.seeds < 1) throw ConfigError("--seeds must be at least 1");
  const LoadedDomain ld = load_domain(o.config);
  search::SearchConfig cfg = with_budget(ld.search, o.budget);
  cfg.threads = o.threads;
  const int budget = cfg.iter_max_MMCS * cfg.iter_max_MC;
  const std::uint64_t first = o.seed.value_or(0);

  std::ostringstream summary;
  summary << "seed,mmcs_best,mc_best\n";
  int wins = 0;
  std::vector<double> improvement;
  for (int k = 0; k < o.seeds; ++k) {
    const std::uint64_t seed = first + static_cast<std::uint64_t>(k);
    const auto m = search::mmcs(*ld.domain, cfg, seed);
    const auto c = search::monte_carlo_search(*ld.domain, budget, cfg, seed);
    const fs::path dir = o.out / ("seed_" + std::to_string(seed));
    write_search(dir, "mmcs_", m, ld);
    write_search(dir, "mc_", c, ld);
    std::ostringstream scatter;
    scatter << "method,iteration,value\n";
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
      scatter << "mmcs," << i + 1 << ',' << format_double(m.samples[i]) << '\n';
    }
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      scatter << "mc," << i + 1 << ',' << format_double(c.samples[i]) << '\n';
    }
    io::write_text_file(dir / "scatter.csv", scatter.str());
    summary << seed << ',' << format_double(m.best_value) << ',' << format_double(c.best_value) << '\n';
    wins += m.best_value >= c.best_value;
    improvement.push_back((m.best_value - c.best_value) / std::max(std::abs(c.best_value), 1e-12));
    log << "seed " << seed << ": MMCS " << format_double(m.best_value) << ", MC " << format_double(c.best_value)
        << "\n";
  }
  io::write_text_file(o.out / "summary.csv", summary.str());
  const double win_rate = wins / static_cast<double>(o.seeds);
  const double med = median(improvement);
  log << "MMCS >= MC in " << wins << "/" << o.seeds << " seeds, median improvement "
      << format_double(100.0 * med) << "%\n";
  json report = report_header("compare-search", first, ld.config_hash);
  report["seeds"] = o.seeds;
  report["budget"] = budget;
  report["mmcs_win_rate"] = win_rate;
  report["median_improvement"] = med;
  write_report(o.out, report, t);
  return kOk;
}

int cmd_success_curve(const Options& o, std::ostream& log) {
  Timer t;
  if (o.runs < 1) throw ConfigError("--runs must be at least 1");
  const LoadedDomain ld = load_domain(o.config);
  const policy::JointPolicy p = load_policy(o.policy, ld);
  dec::EvalConfig eval = ld.search.eval;
  eval.n_rollouts = o.runs;
  if (o.horizon > 0) eval.horizon = o.horizon;
  eval.seed = o.seed.value_or(0);
  eval.threads = o.threads;
  const auto r = dec::evaluate_joint_policy(p, *ld.domain, eval);
  const auto curve = success_curve(r.metrics);
  std::ostringstream csv;
  csv << "k,probability\n";
  for (std::size_t k = 0; k < curve.size(); ++k) csv << k << ',' << format_double(curve[k]) << '\n';
  io::write_text_file(o.out / "success_curve.csv", csv.str());
  for (std::size_t k = 0; k < curve.size(); ++k) log << "P(>= " << k << ") = " << format_double(curve[k]) << "\n";
  json report = report_header("success-curve", eval.seed, ld.config_hash);
  report["runs"] = o.runs;
  report["horizon"] = eval.horizon;
  report["mean_value"] = r.mean;
  report["std_error"] = r.std_error;
  write_report(o.out, report, t);
  return kOk;
}

int cmd_validate(const Options& o, std::ostream& log) {
  const LoadedDomain ld = load_domain(o.config);
  if (o.policy.empty()) throw ConfigError("--policy is required");
  const policy::JointPolicy p = policy::joint_policy_from_json(io::read_json_file(o.policy));
  const auto tables = dec::successor_tables(*ld.domain);
  const std::string err = policy::validate_joint_policy(p, tables);
  if (!err.empty()) {
    log << "invalid: " << err << "\n";
    return kConfigError;
  }
  const int n_nodes = p.controllers.empty() ? 0 : p.controllers.front().n_nodes();
  log << "valid; " << p.controllers.size() << " controllers of " << n_nodes << " nodes, joint space "
      << policy::controller_space_cardinality(n_nodes, tables).str() << " policies\n";
  return kOk;
}

}  // namespace

LoadedDomain load_domain(const fs::path& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
  LoadedDomain ld = load_domain_json(j, path.parent_path());
  ld.config_hash = io::fnv1a_hex(text);
  return ld;
}

LoadedDomain load_domain_json(const json& j, const fs::path& base_dir) {
  LoadedDomain ld;
  ld.kind = io::value_or<std::string>(j, "kind", "");
  if (ld.kind == "table") {
    auto d = std::make_shared<dec::TableDomain>(dec::TableDomain::from_json(j, base_dir));
    ld.search.eval = d->defaults().eval;
    ld.search.n_nodes = d->defaults().n_nodes;
    ld.tma_names = d->tma_names();
    ld.domain = d;
  } else if (ld.kind == "package_delivery") {
    const delivery::DeliveryConfig cfg = delivery::DeliveryConfig::from_json(j);
    auto d = std::make_shared<delivery::DeliveryDomain>(cfg);
    ld.search = cfg.search;
    ld.search.eval = d->eval_defaults();
    ld.search.n_nodes = cfg.n_nodes;
    ld.tma_names = d->tma_names();
    ld.domain = d;
  } else {
    throw ConfigError("domain config needs \"kind\": \"table\" or \"package_delivery\"");
  }
  apply_search_block(j, ld.search);
  ld.config_hash = io::fnv1a_hex(j.dump());
  return ld;
}

tma::Tma build_tma(const json& j) {
  try {
    const ModelSpec spec = io::model_spec_from_json(j.at("model"));
    const auto model = spec.build();
    const int n = static_cast<int>(spec.A.rows()), m = static_cast<int>(spec.G.cols());
    belief::GaussianBelief start;
    start.mean = io::vector_from_json(j.at("start"));
    start.cov = j.contains("start_cov") ? io::matrix_from_json(j["start_cov"]) : belief::stationary_covariance(model);
    const Vector goal = io::vector_from_json(j.at("goal"));
    const tma::SamplingConfig sc = io::sampling_config_from_json(j.value("sampling", json::object()), n, m);
    Rng rng = make_rng(j.value("seed", std::uint64_t{0}));
    return tma::construct_tma(start, goal, model, sc, rng);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad TMA config: ") + e.what());
  }
}

std::vector<double> success_curve(std::span<const double> metric) {
  if (metric.empty()) return {1.0};
  long top = 0;
  for (double v : metric) top = std::max(top, static_cast<long>(std::floor(v)));
  std::vector<double> curve(top + 1, 0.0);
  for (double v : metric) {
    const long k = static_cast<long>(std::floor(v));
    for (long i = 0; i <= k; ++i) curve[i] += 1.0;
  }
  for (double& c : curve) c /= static_cast<double>(metric.size());
  return curve;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trace_csv(std::span<const double> values) {
  std::string s = "iteration,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    s += std::to_string(i + 1);
    s += ',';
    s += format_double(values[i]);
    s += '\n';
  }
  return s;
}

search::SearchConfig with_budget(search::SearchConfig cfg, long budget) {
  if (budget <= 0) return cfg;
  if (budget <= cfg.iter_max_MC) {
    cfg.iter_max_MC = static_cast<int>(budget);
    cfg.iter_max_MMCS = 1;
  } else if (budget % cfg.iter_max_MC == 0) {
    cfg.iter_max_MMCS = static_cast<int>(budget / cfg.iter_max_MC);
  } else {
    throw ConfigError("budget " + std::to_string(budget) + " is not a multiple of iter_max_MC (" +
                      std::to_string(cfg.iter_max_MC) + ")");
  }
  return cfg;
}

int run_command(const std::string& name, const Options& opts, std::ostream& log) {
  try {
    if (name == "build-tma") return cmd_build_tma(opts, log);
    if (name == "solve") return cmd_search(opts, log, true);
    if (name == "mc-baseline") return cmd_search(opts, log, false);
    if (name == "compare-search") return cmd_compare(opts, log);
    if (name == "success-curve") return cmd_success_curve(opts, log);
    if (name == "validate-policy") return cmd_validate(opts, log);
    log << "unknown command '" << name << "'\n";
    return kConfigError;
  } catch (const GoalUnreachable& e) {
    log << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const NoValidSuccessor& e) {
    log << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace posmdp::harness

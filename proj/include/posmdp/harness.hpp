#pragma once

// Experiment plumbing shared by the command-line tool, the Python module and
// the tests: domain loading, TMA construction from a config file, CSV
// formatting and the subcommands themselves.
//
// Every command writes into an output directory. CSV files hold only seeded
// results, so reruns with the same seed are byte-identical; wall time goes to
// report.json.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "posmdp/decposmdp.hpp"
#include "posmdp/search.hpp"
#include "posmdp/tma_graph.hpp"

namespace posmdp::harness {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kInfeasible = 3 };

struct LoadedDomain {
  std::shared_ptr<const dec::Domain> domain;
  std::string kind;               // "table" or "package_delivery"
  search::SearchConfig search;    // n_nodes and eval filled from the config
  std::vector<std::string> tma_names;
  std::string config_hash;        // FNV-1a of the file bytes
};

/// Dispatches on the "kind" key of the file.
LoadedDomain load_domain(const std::filesystem::path& path);
LoadedDomain load_domain_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// {"model": {...}, "start": mean, "start_cov"?: matrix, "goal": mean,
///  "sampling": {...}, "seed": n}. Without start_cov the start covariance is
/// the stationary covariance of the model.
tma::Tma build_tma(const nlohmann::json& j);

/// P(metric >= k) for k = 0..max(metric). Empty input gives {1}.
std::vector<double> success_curve(std::span<const double> metric);

/// Shortest representation that reads back to the same double.
std::string format_double(double v);
/// "iteration,value" rows, iterations from 1.
std::string trace_csv(std::span<const double> values);

/// Search settings after applying a budget: a budget no larger than
/// iter_max_MC runs one outer iteration of that size, otherwise it must be a
/// multiple of iter_max_MC. Non-positive keeps the configured budget.
search::SearchConfig with_budget(search::SearchConfig cfg, long budget);

struct Options {
  std::filesystem::path config;
  std::filesystem::path out = ".";
  std::filesystem::path policy;
  std::optional<std::uint64_t> seed;  // unset: 0, or the config's own seed for build-tma
  int seeds = 20;
  long budget = 0;
  int threads = 1;
  int runs = 250;
  int horizon = 0;  // 0 keeps the config value
};

/// Runs one subcommand (build-tma, solve, mc-baseline, compare-search,
/// success-curve, validate-policy). Errors are reported on `log` and mapped
/// to the exit codes above.
int run_command(const std::string& name, const Options& opts, std::ostream& log);

}  // namespace posmdp::harness

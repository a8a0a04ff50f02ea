#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "posmdp/belief.hpp"
#include "posmdp/error.hpp"
#include "posmdp/harness.hpp"
#include "posmdp/json_io.hpp"
#include "posmdp/search.hpp"
#include "posmdp/tma_graph.hpp"

namespace py = pybind11;
using namespace posmdp;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python side wraps it with json.loads.
json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

py::dict search_result(const search::SearchResult& r, const harness::LoadedDomain& ld) {
  py::dict d;
  d["best_value"] = r.best_value;
  d["trace"] = r.trace;
  d["samples"] = r.samples;
  d["policy"] = policy::to_json(r.best, ld.tma_names).dump();
  return d;
}

search::SearchConfig search_config(const harness::LoadedDomain& ld, long budget, int threads) {
  search::SearchConfig cfg = harness::with_budget(ld.search, budget);
  cfg.threads = threads;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Belief-space macro-actions and policy search for multi-robot teams";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<GoalUnreachable>(m, "GoalUnreachable", PyExc_RuntimeError);
  py::register_exception<NoValidSuccessor>(m, "NoValidSuccessor", PyExc_RuntimeError);
  py::register_exception<InitiationViolated>(m, "InitiationViolated", PyExc_RuntimeError);

  m.def(
      "stationary_covariance",
      [](const Matrix& A, const Matrix& G, const Matrix& C, const Matrix& Q, const Matrix& R) {
        return belief::stationary_covariance(belief::LinearGaussianModel(A, G, C, Q, R));
      },
      py::arg("A"), py::arg("G"), py::arg("C"), py::arg("Q"), py::arg("R"),
      "Posterior covariance fixed point of the Kalman filter.");

  py::class_<tma::Tma>(m, "Tma")
      .def_readonly("start_id", &tma::Tma::start_id)
      .def_readonly("values", &tma::Tma::values)
      .def_readonly("success", &tma::Tma::success)
      .def_readonly("time_to_goal", &tma::Tma::time_to_goal)
      .def_property_readonly("milestones", [](const tma::Tma& t) { return t.graph.size(); })
      .def("to_json", [](const tma::Tma& t) { return io::to_json(t).dump(); });

  m.def(
      "build_tma", [](const std::string& config) { return harness::build_tma(parse(config)); }, py::arg("config"),
      "Constructs a TMA from a JSON config string.", py::call_guard<py::gil_scoped_release>());
  m.def(
      "load_tma", [](const std::filesystem::path& path) { return io::load_tma(path); }, py::arg("path"));

  py::class_<harness::LoadedDomain>(m, "Domain")
      .def_readonly("kind", &harness::LoadedDomain::kind)
      .def_readonly("tma_names", &harness::LoadedDomain::tma_names)
      .def_readonly("config_hash", &harness::LoadedDomain::config_hash)
      .def_property_readonly("num_agents", [](const harness::LoadedDomain& d) { return d.domain->num_agents(); })
      .def_property_readonly("n_nodes", [](const harness::LoadedDomain& d) { return d.search.n_nodes; })
      .def(
          "policy_space_size",
          [](const harness::LoadedDomain& d, int n_nodes) {
            return policy::controller_space_cardinality(n_nodes, dec::successor_tables(*d.domain)).str();
          },
          py::arg("n_nodes"), "Number of joint policies, as a decimal string.")
      .def(
          "validate_policy",
          [](const harness::LoadedDomain& d, const std::string& p) {
            return policy::validate_joint_policy(policy::joint_policy_from_json(parse(p)),
                                                 dec::successor_tables(*d.domain));
          },
          py::arg("policy"), "Empty string when the policy fits the domain.")
      .def(
          "evaluate",
          [](const harness::LoadedDomain& d, const std::string& p, int n_rollouts, int horizon, std::uint64_t seed) {
            const auto jp = policy::joint_policy_from_json(parse(p));
            dec::EvalConfig eval = d.search.eval;
            if (n_rollouts > 0) eval.n_rollouts = n_rollouts;
            if (horizon > 0) eval.horizon = horizon;
            eval.seed = seed;
            dec::EvalResult r;
            {
              py::gil_scoped_release release;
              r = dec::evaluate_joint_policy(jp, *d.domain, eval);
            }
            py::dict out;
            out["mean"] = r.mean;
            out["std_error"] = r.std_error;
            out["max_identity_gap"] = r.max_identity_gap;
            out["values"] = r.values;
            out["metrics"] = r.metrics;
            return out;
          },
          py::arg("policy"), py::arg("n_rollouts") = 0, py::arg("horizon") = 0, py::arg("seed") = 0)
      .def(
          "mmcs",
          [](const harness::LoadedDomain& d, std::uint64_t seed, long budget, int threads) {
            search::SearchResult r;
            {
              py::gil_scoped_release release;
              r = search::mmcs(*d.domain, search_config(d, budget, threads), seed);
            }
            return search_result(r, d);
          },
          py::arg("seed") = 0, py::arg("budget") = 0, py::arg("threads") = 1, "Masked Monte Carlo search.")
      .def(
          "monte_carlo",
          [](const harness::LoadedDomain& d, std::uint64_t seed, long budget, int threads) {
            const auto cfg = search_config(d, budget, threads);
            search::SearchResult r;
            {
              py::gil_scoped_release release;
              r = search::monte_carlo_search(*d.domain, cfg.iter_max_MMCS * cfg.iter_max_MC, cfg, seed);
            }
            return search_result(r, d);
          },
          py::arg("seed") = 0, py::arg("budget") = 0, py::arg("threads") = 1, "Unmasked Monte Carlo search.");

  m.def(
      "load_domain", [](const std::filesystem::path& path) { return harness::load_domain(path); }, py::arg("path"));
  m.def(
      "load_domain_json",
      [](const std::string& text, const std::filesystem::path& base_dir) {
        return harness::load_domain_json(parse(text), base_dir);
      },
      py::arg("config"), py::arg("base_dir") = std::filesystem::path{});

  m.def(
      "success_curve", [](const std::vector<double>& metric) { return harness::success_curve(metric); },
      py::arg("metric"), "P(metric >= k) for k = 0..max.");

  m.def(
      "run_command",
      [](const std::string& name, const std::filesystem::path& config, const std::filesystem::path& out,
         std::optional<std::uint64_t> seed, long budget, int seeds, int threads, const std::filesystem::path& policy,
         int runs, int horizon) {
        harness::Options o;
        o.config = config;
        o.out = out;
        o.seed = seed;
        o.budget = budget;
        o.seeds = seeds;
        o.threads = threads;
        o.policy = policy;
        o.runs = runs;
        o.horizon = horizon;
        std::ostringstream log;
        int code;
        {
          py::gil_scoped_release release;
          code = harness::run_command(name, o, log);
        }
        return py::make_tuple(code, log.str());
      },
      py::arg("name"), py::arg("config"), py::arg("out") = std::filesystem::path("."), py::arg("seed") = py::none(),
      py::arg("budget") = 0, py::arg("seeds") = 20, py::arg("threads") = 1,
      py::arg("policy") = std::filesystem::path{}, py::arg("runs") = 250, py::arg("horizon") = 0,
      "Runs a command-line subcommand in-process; returns (exit code, log).");
}

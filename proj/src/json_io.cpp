#include "posmdp/json_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "posmdp/error.hpp"

namespace posmdp::io {

namespace {

const Json& require(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing key '") + key + "'");
  return *it;
}

Matrix weight_matrix(const Json& j, int dim) {
  if (j.is_number()) return j.get<double>() * Matrix::Identity(dim, dim);
  Matrix m = matrix_from_json(j);
  if (m.rows() != dim || m.cols() != dim) throw ConfigError("weight matrix has the wrong size");
  return m;
}

Box box_from_json(const Json& j) {
  Box b{vector_from_json(require(j, "lo")), vector_from_json(require(j, "hi"))};
  if (b.lo.size() != b.hi.size()) throw ConfigError("box lo/hi dimension mismatch");
  return b;
}

Json box_to_json(const Box& b) { return Json{{"lo", to_json(b.lo)}, {"hi", to_json(b.hi)}}; }

}  // namespace

Json to_json(const Matrix& m) {
  Json data = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json to_json(const belief::GaussianBelief& b) {
  return Json{{"mean", to_json(b.mean)}, {"cov", to_json(b.cov)}};
}

Matrix matrix_from_json(const Json& j) {
  try {
    if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
    if (j.is_object()) {
      const int rows = require(j, "rows").get<int>();
      const int cols = require(j, "cols").get<int>();
      const Json& data = require(j, "data");
      if (rows < 0 || cols < 0 || static_cast<int>(data.size()) != rows * cols) {
        throw ConfigError("matrix data length does not match rows*cols");
      }
      Matrix m(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = data[r * cols + c].get<double>();
      }
      return m;
    }
    if (j.is_array()) {
      const int rows = static_cast<int>(j.size());
      if (rows == 0) return Matrix(0, 0);
      const int cols = static_cast<int>(j[0].size());
      Matrix m(rows, cols);
      for (int r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols) {
          throw ConfigError("matrix rows must be arrays of equal length");
        }
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
      }
      return m;
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad matrix: ") + e.what());
  }
  throw ConfigError("matrix must be a number, an array of rows or {rows, cols, data}");
}

Vector vector_from_json(const Json& j) {
  try {
    if (j.is_number()) return Vector::Constant(1, j.get<double>());
    if (!j.is_array()) throw ConfigError("vector must be an array of numbers");
    Vector v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
    return v;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad vector: ") + e.what());
  }
}

belief::GaussianBelief belief_from_json(const Json& j) {
  belief::GaussianBelief b{vector_from_json(require(j, "mean")), matrix_from_json(require(j, "cov"))};
  if (b.cov.rows() != b.mean.size() || b.cov.cols() != b.mean.size()) {
    throw ConfigError("belief covariance must be square with the mean's dimension");
  }
  return b;
}

ModelSpec model_spec_from_json(const Json& j) {
  ModelSpec s;
  const std::string type = value_or<std::string>(j, "type", "matrices");
  if (type == "scalar") {
    s = scalar_model_spec(value_or(j, "a", 1.0), value_or(j, "g", 1.0), value_or(j, "c", 1.0),
                          value_or(j, "q", 0.01), value_or(j, "r", 0.01));
  } else if (type == "single_integrator_2d") {
    s = single_integrator_2d(value_or(j, "dt", 0.1), value_or(j, "process_var", 1e-5),
                             value_or(j, "obs_var", 1e-4));
  } else if (type == "double_integrator_2d") {
    s = double_integrator_2d(value_or(j, "dt", 0.1), value_or(j, "process_var", 1e-5),
                             value_or(j, "obs_var", 1e-4));
  } else if (type == "matrices") {
    s.A = matrix_from_json(require(j, "A"));
    s.G = matrix_from_json(require(j, "G"));
    s.C = matrix_from_json(require(j, "C"));
    s.Q = matrix_from_json(require(j, "Q"));
    s.R_obs = matrix_from_json(require(j, "R_obs"));
  } else {
    throw ConfigError("unknown model type '" + type + "'");
  }
  if (auto it = j.find("step_reward"); it != j.end()) {
    s.step_reward.constant = value_or(*it, "constant", 0.0);
    s.step_reward.control_weight = value_or(*it, "control_weight", 0.0);
  }
  if (auto it = j.find("constraints"); it != j.end()) {
    const Json& c = *it;
    if (c.contains("position_dims")) s.constraints.position_dims = c["position_dims"].get<std::vector<int>>();
    if (c.contains("bounds")) s.constraints.bounds = box_from_json(c["bounds"]);
    if (c.contains("obstacles")) {
      for (const Json& o : c["obstacles"]) s.constraints.obstacles.push_back(box_from_json(o));
    }
    s.constraints.everywhere = value_or(c, "everywhere", false);
  }
  return s;
}

Json to_json(const ModelSpec& s) {
  Json c{{"position_dims", s.constraints.position_dims}, {"everywhere", s.constraints.everywhere}};
  if (s.constraints.bounds) c["bounds"] = box_to_json(*s.constraints.bounds);
  Json obstacles = Json::array();
  for (const Box& b : s.constraints.obstacles) obstacles.push_back(box_to_json(b));
  c["obstacles"] = std::move(obstacles);
  return Json{{"type", "matrices"},
              {"A", to_json(s.A)},
              {"G", to_json(s.G)},
              {"C", to_json(s.C)},
              {"Q", to_json(s.Q)},
              {"R_obs", to_json(s.R_obs)},
              {"step_reward",
               {{"constant", s.step_reward.constant}, {"control_weight", s.step_reward.control_weight}}},
              {"constraints", std::move(c)}};
}

belief::GainSpec gain_spec_from_json(const Json& j, int state_dim, int control_dim) {
  if (j.contains("fixed")) return belief::FixedGain{matrix_from_json(j["fixed"])};
  const Json lqr = j.contains("lqr") ? j["lqr"] : Json::object();
  return belief::LqrGain{weight_matrix(lqr.value("state_weight", Json(1.0)), state_dim),
                         weight_matrix(lqr.value("control_weight", Json(1.0)), control_dim)};
}

tma::SamplingConfig sampling_config_from_json(const Json& j, int state_dim, int control_dim) {
  tma::SamplingConfig cfg;
  cfg.nodes = value_or(j, "nodes", cfg.nodes);
  cfg.neighbors = value_or(j, "neighbors", cfg.neighbors);
  cfg.sims_per_edge = value_or(j, "sims_per_edge", cfg.sims_per_edge);
  cfg.epsilon = value_or(j, "epsilon", cfg.epsilon);
  cfg.failure_value = value_or(j, "failure_value", cfg.failure_value);
  cfg.max_steps = value_or(j, "max_steps", cfg.max_steps);
  cfg.dp_tol = value_or(j, "dp_tol", cfg.dp_tol);
  cfg.max_sample_attempts = value_or(j, "max_sample_attempts", cfg.max_sample_attempts);
  cfg.threads = value_or(j, "threads", cfg.threads);
  if (j.contains("workspace")) {
    const Json& w = j["workspace"];
    cfg.workspace_lo = vector_from_json(require(w, "lo"));
    cfg.workspace_hi = vector_from_json(require(w, "hi"));
    cfg.sample_dims = w.value("dims", std::vector<int>{});
    if (cfg.sample_dims.empty()) {
      for (int d = 0; d < cfg.workspace_lo.size(); ++d) cfg.sample_dims.push_back(d);
    }
  }
  if (j.contains("anchors")) {
    for (const Json& a : j["anchors"]) cfg.anchors.push_back(vector_from_json(a));
  }
  cfg.gain = gain_spec_from_json(j.value("gain", Json::object()), state_dim, control_dim);
  if (j.contains("norm")) {
    cfg.norm.mean_weight = value_or(j["norm"], "mean_weight", cfg.norm.mean_weight);
    cfg.norm.cov_weight = value_or(j["norm"], "cov_weight", cfg.norm.cov_weight);
  }
  return cfg;
}

Json to_json(const tma::Tma& t) {
  const tma::TmaGraph& g = t.graph;
  Json milestones = Json::array();
  for (const auto& m : g.milestones) {
    Json jm{{"id", m.id}, {"epsilon", m.epsilon}};
    jm["center"] = m.is_failure() ? Json(nullptr) : to_json(m.center);
    milestones.push_back(std::move(jm));
  }
  Json edges = Json::array();
  for (const auto& e : g.edges) {
    edges.push_back(Json{{"from", e.from_id},
                         {"to", e.to_id},
                         {"gain", to_json(e.lma.params.gain)},
                         {"target", to_json(e.lma.params.target)},
                         {"kalman_gain", to_json(e.lma.kalman_gain)},
                         {"attractor", to_json(e.lma.attractor)},
                         {"landing_probs", e.landing_probs},
                         {"reward", e.reward},
                         {"time", e.time},
                         {"sample_count", e.sample_count}});
  }
  return Json{{"format", kTmaFormat},
              {"version", kTmaVersion},
              {"goal_id", g.goal_id},
              {"start_id", t.start_id},
              {"failure_value", g.failure_value},
              {"availability", t.availability},
              {"milestones", std::move(milestones)},
              {"edges", std::move(edges)},
              {"policy", t.policy},
              {"values", t.values},
              {"success", t.success},
              {"time_to_goal", t.time_to_goal}};
}

tma::Tma tma_from_json(const Json& j) {
  if (value_or<std::string>(j, "format", "") != kTmaFormat) throw ConfigError("not a posmdp.tma document");
  if (value_or(j, "version", 0) != kTmaVersion) throw ConfigError("unsupported posmdp.tma version");
  try {
    tma::Tma t;
    tma::TmaGraph& g = t.graph;
    g.goal_id = require(j, "goal_id").get<int>();
    g.failure_value = require(j, "failure_value").get<double>();
    t.start_id = require(j, "start_id").get<int>();
    t.availability = j.value("availability", std::vector<std::string>{});
    for (const Json& jm : require(j, "milestones")) {
      belief::Milestone m;
      m.id = require(jm, "id").get<int>();
      m.epsilon = require(jm, "epsilon").get<double>();
      if (!jm["center"].is_null()) m.center = belief_from_json(jm["center"]);
      g.milestones.push_back(std::move(m));
    }
    g.out_edges.assign(g.milestones.size(), {});
    for (const Json& je : require(j, "edges")) {
      tma::GraphEdge e;
      e.from_id = require(je, "from").get<int>();
      e.to_id = require(je, "to").get<int>();
      e.lma.params.gain = matrix_from_json(require(je, "gain"));
      e.lma.params.target = vector_from_json(require(je, "target"));
      e.lma.kalman_gain = matrix_from_json(require(je, "kalman_gain"));
      e.lma.attractor = belief_from_json(require(je, "attractor"));
      e.landing_probs = require(je, "landing_probs").get<std::vector<double>>();
      e.reward = require(je, "reward").get<double>();
      e.time = require(je, "time").get<double>();
      e.sample_count = require(je, "sample_count").get<int>();
      g.add_edge(std::move(e));
    }
    t.policy = require(j, "policy").get<tma::Policy>();
    t.values = require(j, "values").get<std::vector<double>>();
    t.success = require(j, "success").get<std::vector<double>>();
    t.time_to_goal = require(j, "time_to_goal").get<std::vector<double>>();
    g.validate();
    const auto n = static_cast<std::size_t>(g.size());
    if (t.policy.size() != n || t.values.size() != n || t.success.size() != n || t.time_to_goal.size() != n) {
      throw ConfigError("TMA analytics must have one entry per milestone");
    }
    if (t.start_id <= 0 || t.start_id >= g.size()) throw ConfigError("TMA start_id out of range");
    return t;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad posmdp.tma document: ") + e.what());
  }
}

void save_tma(const tma::Tma& tma, const std::filesystem::path& path) {
  write_text_file(path, to_json(tma).dump(1) + "\n");
}

tma::Tma load_tma(const std::filesystem::path& path) { return tma_from_json(read_json_file(path)); }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace posmdp::io

#include "posmdp/table_domain.hpp"

#include <algorithm>

#include "posmdp/error.hpp"
#include "posmdp/json_io.hpp"

namespace posmdp::dec {

namespace {

using nlohmann::json;

int find_name(const std::vector<std::string>& names, const std::string& name, const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
  return static_cast<int>(it - names.begin());
}

}  // namespace

int TableDomain::e_state_index(const std::string& name) const { return find_name(e_names_, name, "e-state"); }

int TableDomain::tma_index(const std::string& name) const { return find_name(tma_names(), name, "TMA"); }

std::vector<std::string> TableDomain::tma_names() const {
  std::vector<std::string> out;
  for (const auto& t : tmas_) out.push_back(t.name);
  return out;
}

TableDomain TableDomain::from_json(const json& j, const std::filesystem::path& base_dir) {
  if (j.value("format", std::string{}) != kDomainFormat) throw ConfigError("not a posmdp.domain document");
  if (j.value("kind", std::string("table")) != "table") throw ConfigError("domain kind is not 'table'");
  TableDomain d;
  try {
    d.e_names_ = j.at("e_states").get<std::vector<std::string>>();
    if (d.e_names_.empty()) throw ConfigError("domain needs at least one e-state");
    d.obs_names_ = j.value("e_obs", d.e_names_);
    d.obs_of_state_.resize(d.e_names_.size());
    const json om = j.value("observation_model", json::object());
    for (std::size_t e = 0; e < d.e_names_.size(); ++e) {
      const std::string obs = om.contains(d.e_names_[e]) ? om[d.e_names_[e]].get<std::string>() : d.e_names_[e];
      d.obs_of_state_[e] = find_name(d.obs_names_, obs, "observation");
    }
    d.initial_e_ = d.e_state_index(j.value("initial_e_state", d.e_names_.front()));

    for (const json& jt : j.at("tmas")) {
      TmaSpec spec;
      spec.name = jt.at("name").get<std::string>();
      if (jt.contains("file")) {
        std::filesystem::path p = jt["file"].get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        spec.tma = std::make_shared<tma::Tma>(io::load_tma(p));
      } else if (jt.contains("inline")) {
        spec.tma = std::make_shared<tma::Tma>(io::tma_from_json(jt["inline"]));
      } else if (jt.contains("fixed")) {
        const json& f = jt["fixed"];
        spec.tma = std::make_shared<tma::Tma>(tma::make_fixed_duration_tma(
            f.value("state_dim", 1), f.at("duration").get<int>(), f.value("step_reward", 0.0),
            f.value("fail_prob", 0.0), f.value("failure_value", -100.0)));
        spec.stationary = true;
      } else {
        throw ConfigError("TMA '" + spec.name + "' needs 'file', 'inline' or 'fixed'");
      }
      spec.stationary = jt.value("stationary", spec.stationary);
      if (jt.contains("model")) {
        spec.model = std::make_shared<belief::LinearGaussianModel>(io::model_spec_from_json(jt["model"]).build());
      }
      spec.agents_required = jt.value("agents_required", 1);
      if (spec.agents_required != 1 && spec.agents_required != 2) {
        throw ConfigError("agents_required must be 1 or 2");
      }
      for (const auto& e : jt.value("availability", std::vector<std::string>{})) {
        spec.availability.push_back(d.e_state_index(e));
      }
      spec.terminal_label = jt.value("terminal_label", spec.name);
      spec.max_edge_steps = jt.value("max_edge_steps", spec.max_edge_steps);
      d.tmas_.push_back(std::move(spec));
    }

    for (const json& ja : j.at("agents")) {
      Agent a;
      a.name = ja.at("name").get<std::string>();
      for (const auto& t : ja.at("roster").get<std::vector<std::string>>()) a.roster.push_back(d.tma_index(t));
      if (a.roster.empty()) throw ConfigError("agent '" + a.name + "' has an empty roster");
      if (ja.contains("initial_belief")) {
        a.initial_belief = io::belief_from_json(ja["initial_belief"]);
      } else {
        a.initial_belief = {Vector::Zero(1), Matrix::Zero(1, 1)};
      }
      d.agents_.push_back(std::move(a));
    }
    if (d.agents_.empty()) throw ConfigError("domain needs at least one agent");

    for (const json& jd : j.value("e_dynamics", json::array())) {
      Transition tr;
      tr.tma = d.tma_index(jd.at("tma").get<std::string>());
      const std::string from = jd.value("from", std::string("*"));
      tr.from = from == "*" ? -1 : d.e_state_index(from);
      double total = 0.0;
      for (const auto& [name, p] : jd.at("to").items()) {
        tr.to.emplace_back(d.e_state_index(name), p.get<double>());
        total += p.get<double>();
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError("e_dynamics row must sum to 1");
      d.dynamics_.push_back(std::move(tr));
    }
    for (const json& jr : j.value("event_rewards", json::array())) {
      const int t = d.tma_index(jr.at("tma").get<std::string>());
      const int e = d.e_state_index(jr.at("e_state").get<std::string>());
      d.event_rewards_[{t, e}] = jr.at("reward").get<double>();
    }
    for (const json& js : j.value("successors", json::array())) {
      const int t = d.tma_index(js.at("tma").get<std::string>());
      const int o = find_name(d.obs_names_, js.at("obs").get<std::string>(), "observation");
      std::vector<int> next;
      for (const auto& n : js.at("next").get<std::vector<std::string>>()) next.push_back(d.tma_index(n));
      d.successors_[{t, o}] = next;
    }
    if (j.contains("fallback_tma")) d.fallback_ = d.tma_index(j["fallback_tma"].get<std::string>());
    d.hold_step_reward_ = j.value("hold_step_reward", 0.0);
    d.join_window_ = j.value("join_window", 0L);
    d.rewards_.discount = j.value("gamma", 0.99);
    d.defaults_.eval.gamma = d.rewards_.discount;
    d.defaults_.eval.horizon = j.value("horizon", d.defaults_.eval.horizon);
    d.defaults_.eval.n_rollouts = j.value("n_rollouts", d.defaults_.eval.n_rollouts);
    std::size_t widest = 0;
    for (const auto& a : d.agents_) widest = std::max(widest, a.roster.size());
    d.defaults_.n_nodes = j.value("n_nodes", static_cast<int>(widest));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad domain document: ") + e.what());
  }
  return d;
}

bool TableDomain::compatible(int, int prev, int obs, int next) const {
  if (auto it = successors_.find({prev, obs}); it != successors_.end()) {
    return std::find(it->second.begin(), it->second.end(), next) != it->second.end();
  }
  // The observation must be consistent with some e-state where `next` can start.
  const auto& avail = tmas_[next].availability;
  for (int e = 0; e < static_cast<int>(e_names_.size()); ++e) {
    if (obs_of_state_[e] != obs) continue;
    if (avail.empty() || std::find(avail.begin(), avail.end(), e) != avail.end()) return true;
  }
  return false;
}

JointConfig TableDomain::initial(Rng&) const {
  JointConfig c;
  for (const auto& a : agents_) c.beliefs.push_back(a.initial_belief);
  c.status.resize(agents_.size());
  c.e_state = initial_e_;
  c.world = 0;
  return c;
}

double TableDomain::on_terminate(JointConfig& c, int, int tma, bool succeeded, Rng& rng) const {
  if (!succeeded) return 0.0;
  double reward = 0.0;
  if (auto it = event_rewards_.find({tma, c.e_state}); it != event_rewards_.end()) {
    reward = it->second;
    c.world = std::any_cast<int>(c.world) + 1;
  }
  for (const Transition& tr : dynamics_) {
    if (tr.tma != tma || (tr.from >= 0 && tr.from != c.e_state)) continue;
    double u = uniform01(rng);
    int next = tr.to.back().first;
    for (const auto& [e, p] : tr.to) {
      if (u < p) {
        next = e;
        break;
      }
      u -= p;
    }
    c.e_state = next;
    break;
  }
  return reward;
}

int TableDomain::observe(const JointConfig& c, int) const { return obs_of_state_.at(c.e_state); }

double TableDomain::metric(const JointConfig& c) const { return std::any_cast<int>(c.world); }

}  // namespace posmdp::dec

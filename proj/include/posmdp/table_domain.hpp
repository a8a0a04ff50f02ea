#pragma once

// A Dec-POSMDP domain described entirely by tables in a JSON document:
// named e-states, a deterministic e-state -> observation map, TMAs (loaded
// from TMA files or fixed-duration), event-driven stochastic e-state
// dynamics, and event rewards keyed by (TMA, e-state before the event).

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "posmdp/decposmdp.hpp"

namespace posmdp::dec {

inline constexpr const char* kDomainFormat = "posmdp.domain";

struct DomainDefaults {
  EvalConfig eval;
  int n_nodes = 0;  // 0: largest roster size
};

class TableDomain : public Domain {
 public:
  /// Relative TMA file paths resolve against `base_dir`.
  static TableDomain from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

  int num_agents() const override { return static_cast<int>(agents_.size()); }
  std::string agent_name(int agent) const override { return agents_.at(agent).name; }
  const std::vector<TmaSpec>& tmas() const override { return tmas_; }
  const std::vector<int>& roster(int agent) const override { return agents_.at(agent).roster; }
  int observation_count(int) const override { return static_cast<int>(obs_names_.size()); }
  std::string observation_name(int, int index) const override { return obs_names_.at(index); }
  bool compatible(int agent, int prev, int obs, int next) const override;
  JointConfig initial(Rng& rng) const override;
  double on_terminate(JointConfig& c, int agent, int tma, bool succeeded, Rng& rng) const override;
  int observe(const JointConfig& c, int agent) const override;
  int fallback_tma(int) const override { return fallback_; }
  double hold_step_reward(int) const override { return hold_step_reward_; }
  long join_window() const override { return join_window_; }
  const RewardSpec& rewards() const override { return rewards_; }
  /// Number of reward events fired so far.
  double metric(const JointConfig& c) const override;

  const DomainDefaults& defaults() const { return defaults_; }
  int e_state_index(const std::string& name) const;
  int tma_index(const std::string& name) const;
  const std::vector<std::string>& e_state_names() const { return e_names_; }
  std::vector<std::string> tma_names() const;

 private:
  struct Agent {
    std::string name;
    std::vector<int> roster;
    belief::GaussianBelief initial_belief;
  };
  struct Transition {
    int tma = -1;
    int from = -1;  // -1 matches any e-state
    std::vector<std::pair<int, double>> to;
  };

  std::vector<std::string> e_names_;
  std::vector<std::string> obs_names_;
  std::vector<int> obs_of_state_;
  int initial_e_ = 0;
  std::vector<TmaSpec> tmas_;
  std::vector<Agent> agents_;
  std::vector<Transition> dynamics_;
  std::map<std::pair<int, int>, double> event_rewards_;  // (tma, e-state) -> reward
  std::map<std::pair<int, int>, std::vector<int>> successors_;  // explicit (tma, obs) -> TMAs
  int fallback_ = -1;
  double hold_step_reward_ = 0.0;
  long join_window_ = 0;
  RewardSpec rewards_;
  DomainDefaults defaults_;
};

}  // namespace posmdp::dec

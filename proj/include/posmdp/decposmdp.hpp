#pragma once

// Asynchronous joint execution of TMAs by several agents over a shared
// environment state, the semi-Markov segment reward, and Monte Carlo
// evaluation of joint finite-state-controller policies.
//
// A segment runs every agent's TMA in lockstep, one primitive step at a time,
// until at least one agent terminates (or dies). Only terminating agents
// receive a macro-observation and move to a new controller node; the others
// resume their TMA in the next segment from exactly where they stopped.

#include <any>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "posmdp/belief.hpp"
#include "posmdp/policy.hpp"
#include "posmdp/rng.hpp"
#include "posmdp/tma_graph.hpp"

namespace posmdp::dec {

using belief::GaussianBelief;

struct MacroObservation {
  int terminal_milestone = 0;  // node of the TMA graph holding the final belief
  int e_obs = 0;               // index into the domain's environment observations
  bool operator==(const MacroObservation&) const = default;
};

struct TmaSpec {
  std::string name;
  std::shared_ptr<const tma::Tma> tma;
  /// When set, the TMA is executed with real LMA/Kalman steps on this model.
  /// Otherwise execution hops between milestones using the stored edge
  /// statistics (landing distribution, rounded mean duration, mean reward).
  std::shared_ptr<const belief::LinearGaussianModel> model;
  int agents_required = 1;
  /// Runs from the TMA's own start node and leaves the agent's belief as is
  /// (manipulation and waiting TMAs).
  bool stationary = false;
  std::vector<int> availability;  // e-states where it may start; empty means all
  std::string terminal_label;     // name of the goal region, for reports
  long max_edge_steps = 10000;    // primitive execution: per-edge timeout
};

enum class Mode { Idle, Running, Holding, Dead };

/// Execution state of one agent inside its current TMA.
struct AgentStatus {
  Mode mode = Mode::Idle;
  int tma = -1;
  int node = 0;              // current milestone in the TMA graph
  int edge = -1;             // edge being followed
  int landing = 0;           // graph execution: pre-drawn landing node of the edge
  long edge_remaining = 0;   // graph execution: steps left on the edge
  long edge_steps = 0;       // primitive execution: steps spent on the edge
  double step_reward = 0.0;  // graph execution: reward per step on the edge
  long hold_remaining = 0;   // holding for a joint-TMA partner
  int partner = -1;          // other agent of a joint TMA run
  bool leader = true;        // the leader's draws drive a shared joint run
  long tma_steps = 0;
  Vector truth;              // primitive execution only
};

/// The Dec-POSMDP state: beliefs, per-agent status, e-state and clock. `world`
/// holds domain-specific details behind the e-state (package ledger, etc.).
struct JointConfig {
  std::vector<GaussianBelief> beliefs;
  std::vector<AgentStatus> status;
  int e_state = 0;
  long clock = 0;
  std::any world;
};

/// g(R^(1), ..., R^(n), R^E).
using Combiner = std::function<double(std::span<const double> per_agent, double team)>;

struct RewardSpec {
  std::vector<std::function<double(const Vector& x, int e_state, const Vector& u)>> per_agent;
  std::function<double(const std::vector<Vector>& x, int e_state, const std::vector<Vector>& u)> team;
  Combiner combiner;
  double discount = 0.99;
};

double sum_combiner(std::span<const double> per_agent, double team);

double joint_reward(const std::vector<Vector>& x, int e_state, const std::vector<Vector>& u,
                    const RewardSpec& spec);

/// Applies the combiner (sum when unset).
double combine(const RewardSpec& spec, std::span<const double> per_agent, double team);

/// Probes linearity of g in every argument at random points.
bool is_multilinear(const Combiner& g, int n_agents, Rng& rng, int probes = 100, double tol = 1e-9);

class Domain {
 public:
  virtual ~Domain() = default;

  virtual int num_agents() const = 0;
  virtual std::string agent_name(int agent) const { return "agent" + std::to_string(agent); }
  virtual const std::vector<TmaSpec>& tmas() const = 0;
  /// TMA ids available to an agent, in controller identity-node order.
  virtual const std::vector<int>& roster(int agent) const = 0;

  /// Size of the agent's macro-observation alphabet and the class of one
  /// observation. The terminal-milestone part of a macro-observation is a
  /// function of the TMA for successful terminations, so classes are keyed
  /// by the environment observation unless a domain overrides this.
  virtual int observation_count(int agent) const = 0;
  virtual int observation_index(int agent, const MacroObservation& o) const;
  virtual std::string observation_name(int agent, int index) const;

  /// Offline validity: may `next` follow `prev` after observation class `obs`?
  virtual bool compatible(int agent, int prev, int obs, int next) const = 0;

  virtual JointConfig initial(Rng& rng) const = 0;
  /// Online initiation predicate at decision time.
  virtual bool can_initiate(const JointConfig& c, int agent, int tma) const;
  /// Whether two agents may run a joint TMA together in this configuration.
  virtual bool can_partner(const JointConfig& c, int a, int b, int tma) const;
  virtual void on_start(JointConfig& c, int agent, int tma, Rng& rng) const;
  /// Applies the e-state dynamics for a terminating TMA and returns the team
  /// event reward R^E. Partners of a joint run are reported one after another.
  virtual double on_terminate(JointConfig& c, int agent, int tma, bool succeeded, Rng& rng) const = 0;
  virtual void on_agent_dead(JointConfig& c, int agent) const;
  virtual void on_segment_end(JointConfig& c, Rng& rng) const;
  /// Environment observation for an agent at termination.
  virtual int observe(const JointConfig& c, int agent) const = 0;

  /// TMA run instead of a controller's choice that cannot initiate; -1 if none.
  virtual int fallback_tma(int agent) const;
  /// Reward per step while holding for a joint-TMA partner.
  virtual double hold_step_reward(int agent) const;
  /// Steps an agent may hold for a partner before giving up; 0 disables holding.
  virtual long join_window() const;
  virtual const RewardSpec& rewards() const = 0;
  /// Scalar mission metric of a final configuration (e.g. packages delivered).
  virtual double metric(const JointConfig& c) const;
};

struct StepRecord {
  long clock = 0;
  double reward = 0.0;  // undiscounted joint reward of this primitive step
};

struct SegmentResult {
  double reward = 0.0;           // R^tau: sum of gamma^t joint rewards, t from 0
  long tau_min = 0;
  std::vector<int> terminated;   // agents whose TMA ended with an observation
  std::vector<int> died;         // agents absorbed in B0 during the segment
  std::map<int, MacroObservation> observations;
  std::vector<StepRecord> steps;
  bool stalled = false;          // max_steps reached without any termination
  JointConfig next;
};

struct StepOptions {
  double gamma = 0.99;
  long max_steps = 100000;
  /// Called after every primitive step, once terminations are applied.
  std::function<void(const JointConfig&)> on_step;
};

/// Runs one segment in place. `assigned[i]` is the TMA for an idle agent i
/// and is ignored (may be -1) for agents that are still busy.
/// Throws InitiationViolated when an assignment cannot start.
SegmentResult advance_joint(JointConfig& config, std::span<const int> assigned, const Domain& domain,
                            Rng& rng, const StepOptions& opts = {});

/// Value-returning form of advance_joint; the result carries the next config.
SegmentResult step_joint(const JointConfig& config, std::span<const int> assigned, const Domain& domain,
                         Rng& rng, const StepOptions& opts = {});

struct EvalConfig {
  int n_rollouts = 100;
  int horizon = 50;          // macro segments per rollout
  double gamma = 0.99;
  long max_segment_steps = 100000;
  std::uint64_t seed = 0;    // rollout r uses substream r of this seed
  int threads = 1;
  std::function<void(const JointConfig&)> on_step;  // see StepOptions; must be thread-safe
};

struct RolloutTrace {
  double value = 0.0;            // sum_k gamma^{t_k} R^tau_k
  double primitive_value = 0.0;  // sum_t gamma^t R_t over recorded primitive steps
  double metric = 0.0;
  int segments = 0;
  long steps = 0;
  std::vector<long> segment_starts;
  std::vector<double> segment_rewards;
  /// Per segment: (agent, controller node before, controller node after).
  std::vector<std::vector<std::tuple<int, int, int>>> node_moves;
};

struct EvalResult {
  double mean = 0.0;
  double std_error = 0.0;
  double max_identity_gap = 0.0;  // max |value - primitive_value| over rollouts
  std::vector<double> values;
  std::vector<double> metrics;
};

/// One rollout of a joint policy: idle agents start the TMA of their current
/// controller node; an agent whose choice cannot initiate runs the domain's
/// fallback TMA and keeps its node. A terminating agent follows the edge of
/// its node labelled by its macro-observation.
RolloutTrace rollout_joint_policy(const policy::JointPolicy& p, const Domain& domain, const EvalConfig& cfg,
                                  Rng& rng);

EvalResult evaluate_joint_policy(const policy::JointPolicy& p, const Domain& domain, const EvalConfig& cfg);

/// Successor tables of every agent, from Domain::compatible.
std::vector<policy::SuccessorTable> successor_tables(const Domain& domain);

struct KernelKey {
  std::vector<int> milestones;  // nearest milestone of each agent's belief in its TMA graph
  int e_state = 0;
  long k = 0;                   // segment duration
  auto operator<=>(const KernelKey&) const = default;
};

/// Empirical distribution over (belief signature, e-state, duration) after one
/// segment from `config` under `assigned`.
std::map<KernelKey, double> estimate_transition_kernel(const JointConfig& config, std::span<const int> assigned,
                                                       const Domain& domain, int n_sims, Rng& rng,
                                                       const StepOptions& opts = {});

}  // namespace posmdp::dec

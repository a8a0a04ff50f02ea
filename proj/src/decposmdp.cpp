#include "posmdp/decposmdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "posmdp/error.hpp"

namespace posmdp::dec {

double sum_combiner(std::span<const double> per_agent, double team) {
  return std::accumulate(per_agent.begin(), per_agent.end(), 0.0) + team;
}

double combine(const RewardSpec& spec, std::span<const double> per_agent, double team) {
  return spec.combiner ? spec.combiner(per_agent, team) : sum_combiner(per_agent, team);
}

double joint_reward(const std::vector<Vector>& x, int e_state, const std::vector<Vector>& u,
                    const RewardSpec& spec) {
  if (x.size() != u.size()) throw ConfigError("joint_reward: one control per agent state required");
  std::vector<double> r(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size() && i < spec.per_agent.size(); ++i) {
    if (spec.per_agent[i]) r[i] = spec.per_agent[i](x[i], e_state, u[i]);
  }
  const double team = spec.team ? spec.team(x, e_state, u) : 0.0;
  return combine(spec, r, team);
}

bool is_multilinear(const Combiner& g, int n_agents, Rng& rng, int probes, double tol) {
  // Linear in one slot with the others fixed, probed through affine
  // combinations so that constant offsets (as in a plain sum) are allowed.
  std::uniform_real_distribution<double> U(-10.0, 10.0);
  auto eval = [&](const std::vector<double>& args) {
    return g(std::span<const double>(args.data(), n_agents), args[n_agents]);
  };
  for (int k = 0; k < probes; ++k) {
    std::vector<double> base(n_agents + 1);
    for (double& v : base) v = U(rng);
    const int slot = uniform_index(rng, n_agents + 1);
    const double a = U(rng), b = U(rng), lambda = U(rng);
    auto at = [&](double v) {
      std::vector<double> args = base;
      args[slot] = v;
      return eval(args);
    };
    const double lhs = at(lambda * a + (1.0 - lambda) * b);
    const double rhs = lambda * at(a) + (1.0 - lambda) * at(b);
    if (std::abs(lhs - rhs) > tol * std::max(1.0, std::abs(lhs))) return false;
  }
  return true;
}

int Domain::observation_index(int agent, const MacroObservation& o) const {
  if (o.e_obs < 0 || o.e_obs >= observation_count(agent)) {
    throw ConfigError("environment observation outside the agent's alphabet");
  }
  return o.e_obs;
}

std::string Domain::observation_name(int, int index) const { return "o" + std::to_string(index); }

bool Domain::can_initiate(const JointConfig& c, int, int tma) const {
  const auto& avail = tmas().at(tma).availability;
  return avail.empty() || std::find(avail.begin(), avail.end(), c.e_state) != avail.end();
}

bool Domain::can_partner(const JointConfig&, int, int, int) const { return true; }
void Domain::on_start(JointConfig&, int, int, Rng&) const {}
void Domain::on_agent_dead(JointConfig&, int) const {}
void Domain::on_segment_end(JointConfig&, Rng&) const {}
int Domain::fallback_tma(int) const { return -1; }
double Domain::hold_step_reward(int) const { return 0.0; }
long Domain::join_window() const { return 0; }
double Domain::metric(const JointConfig&) const { return 0.0; }

namespace {

int draw_landing(const std::vector<double>& probs, Rng& rng) {
  double u = uniform01(rng);
  for (int j = 0; j < static_cast<int>(probs.size()); ++j) {
    if (u < probs[j]) return j;
    u -= probs[j];
  }
  // Round-off residue: last node with positive mass.
  for (int j = static_cast<int>(probs.size()) - 1; j >= 0; --j) {
    if (probs[j] > 0.0) return j;
  }
  return 0;
}

bool primitive(const TmaSpec& spec) { return spec.model && !spec.stationary; }

class Executor {
 public:
  Executor(JointConfig& c, const Domain& d, Rng& rng) : c_(c), d_(d), rng_(rng) {}

  void start_assignments(std::span<const int> assigned) {
    const int n = d_.num_agents();
    if (static_cast<int>(c_.status.size()) != n || static_cast<int>(c_.beliefs.size()) != n) {
      throw ConfigError("joint configuration does not match the agent count");
    }
    std::vector<int> pending(n, -1);
    for (int i = 0; i < n; ++i) {
      if (c_.status[i].mode != Mode::Idle) continue;
      if (i >= static_cast<int>(assigned.size()) || assigned[i] < 0) {
        throw InitiationViolated("idle agent " + d_.agent_name(i) + " has no TMA assigned");
      }
      const int tma = assigned[i];
      const auto& roster = d_.roster(i);
      if (std::find(roster.begin(), roster.end(), tma) == roster.end()) {
        throw InitiationViolated("TMA " + std::to_string(tma) + " is not in the roster of " + d_.agent_name(i));
      }
      if (!d_.can_initiate(c_, i, tma)) {
        throw InitiationViolated(d_.tmas()[tma].name + " cannot start for " + d_.agent_name(i));
      }
      pending[i] = tma;
    }
    for (int i = 0; i < n; ++i) {
      const int tma = pending[i];
      if (tma < 0 || c_.status[i].mode != Mode::Idle) continue;
      const TmaSpec& spec = d_.tmas()[tma];
      if (spec.agents_required == 1) {
        begin(i, tma, -1);
        continue;
      }
      const int partner = find_partner(i, tma, pending);
      if (partner >= 0) {
        pending[partner] = -1;
        begin(std::min(i, partner), tma, std::max(i, partner));
      } else if (d_.join_window() > 0) {
        AgentStatus& st = c_.status[i];
        Vector truth = std::move(st.truth);
        st = AgentStatus{};
        st.truth = std::move(truth);
        st.node = -1;
        st.mode = Mode::Holding;
        st.tma = tma;
        st.hold_remaining = d_.join_window();
      } else {
        throw InitiationViolated(spec.name + " needs a partner for " + d_.agent_name(i));
      }
    }
  }

  SegmentResult run(const StepOptions& opts) {
    SegmentResult res;
    const int n = d_.num_agents();
    double discount = 1.0;
    for (long t = 0; t < opts.max_steps; ++t) {
      if (std::none_of(c_.status.begin(), c_.status.end(),
                       [](const AgentStatus& s) { return s.mode != Mode::Dead; })) {
        break;
      }
      std::vector<double> r(n, 0.0);
      std::vector<int> done, failed_hold, dead;
      for (int i = 0; i < n; ++i) {
        AgentStatus& st = c_.status[i];
        if (st.mode == Mode::Holding) {
          r[i] = d_.hold_step_reward(i);
          if (--st.hold_remaining <= 0) failed_hold.push_back(i);
        } else if (st.mode == Mode::Running && st.leader) {
          r[i] = advance_leader(i, done, dead);
        }
      }
      for (int i = 0; i < n; ++i) {
        AgentStatus& st = c_.status[i];
        if (st.mode != Mode::Running || st.leader) continue;
        mirror_follower(i, done, dead);
        // Followers pay the same per-step reward as the leader's motion.
        r[i] = r[c_.status[i].partner];
      }
      double team = 0.0;
      std::sort(done.begin(), done.end());
      std::sort(dead.begin(), dead.end());
      for (int i : done) team += d_.on_terminate(c_, i, c_.status[i].tma, true, rng_);
      for (int i : failed_hold) team += d_.on_terminate(c_, i, c_.status[i].tma, false, rng_);
      for (int i : dead) {
        c_.status[i].mode = Mode::Dead;
        d_.on_agent_dead(c_, i);
      }
      for (int i : done) c_.status[i].mode = Mode::Idle;
      for (int i : failed_hold) c_.status[i].mode = Mode::Idle;

      const double step_reward = combine(d_.rewards(), r, team);
      if (opts.on_step) opts.on_step(c_);
      res.steps.push_back(StepRecord{c_.clock, step_reward});
      res.reward += discount * step_reward;
      discount *= opts.gamma;
      ++c_.clock;
      ++res.tau_min;

      if (!done.empty() || !failed_hold.empty() || !dead.empty()) {
        res.terminated = done;
        res.terminated.insert(res.terminated.end(), failed_hold.begin(), failed_hold.end());
        std::sort(res.terminated.begin(), res.terminated.end());
        res.died = dead;
        for (int i : res.terminated) {
          res.observations[i] = MacroObservation{c_.status[i].node, d_.observe(c_, i)};
        }
        d_.on_segment_end(c_, rng_);
        return res;
      }
    }
    res.stalled = true;
    return res;
  }

 private:
  int find_partner(int i, int tma, const std::vector<int>& pending) const {
    const int n = d_.num_agents();
    for (int j = 0; j < n; ++j) {
      if (j == i || !d_.can_partner(c_, i, j, tma)) continue;
      const AgentStatus& sj = c_.status[j];
      const bool holding = sj.mode == Mode::Holding && sj.tma == tma && d_.can_initiate(c_, j, tma);
      const bool fresh = sj.mode == Mode::Idle && pending[j] == tma && j > i;
      if (holding || fresh) return j;
    }
    return -1;
  }

  const tma::Tma& graph_of(int i) const { return *d_.tmas()[c_.status[i].tma].tma; }

  void begin(int leader, int tma, int follower) {
    const TmaSpec& spec = d_.tmas()[tma];
    for (int i : {leader, follower}) {
      if (i < 0) continue;
      Vector truth = std::move(c_.status[i].truth);
      AgentStatus& st = c_.status[i];
      st = AgentStatus{};
      st.truth = std::move(truth);
      st.mode = Mode::Running;
      st.tma = tma;
      st.partner = i == leader ? follower : leader;
      st.leader = i == leader;
      d_.on_start(c_, i, tma, rng_);
    }
    AgentStatus& st = c_.status[leader];
    const tma::Tma& t = *spec.tma;
    st.node = spec.stationary ? t.start_id : tma::nearest_milestone(t.graph, c_.beliefs[leader]);
    if (primitive(spec) && st.truth.size() != spec.model->state_dim()) {
      st.truth = belief::sample_from_belief(c_.beliefs[leader], rng_);
    }
    prepare_edge(leader);
    if (follower >= 0) copy_progress(leader, follower);
  }

  void prepare_edge(int i) {
    AgentStatus& st = c_.status[i];
    const tma::Tma& t = graph_of(i);
    st.edge_steps = 0;
    if (st.node == t.graph.goal_id) {
      // Already at the goal: the TMA still takes one step.
      st.edge = -1;
      st.landing = st.node;
      st.edge_remaining = 1;
      st.step_reward = 0.0;
      return;
    }
    const int e = t.policy.at(st.node);
    if (e < 0) throw NoOutgoingEdge("TMA policy undefined at node " + std::to_string(st.node));
    st.edge = e;
    const tma::GraphEdge& edge = t.graph.edges[e];
    st.landing = draw_landing(edge.landing_probs, rng_);
    st.edge_remaining = std::max<long>(1, std::lround(edge.time));
    st.step_reward = edge.reward / static_cast<double>(st.edge_remaining);
  }

  // Returns true when the agent reached the goal and its TMA ends.
  bool arrive(int i, int node, bool set_belief, std::vector<int>& done, std::vector<int>& dead) {
    AgentStatus& st = c_.status[i];
    const TmaSpec& spec = d_.tmas()[st.tma];
    if (node == tma::kFailureId) {
      dead.push_back(i);
      return true;
    }
    st.node = node;
    if (set_belief && !spec.stationary) c_.beliefs[i] = spec.tma->graph.milestones[node].center;
    if (node == spec.tma->graph.goal_id) {
      done.push_back(i);
      return true;
    }
    prepare_edge(i);
    return false;
  }

  double advance_leader(int i, std::vector<int>& done, std::vector<int>& dead) {
    AgentStatus& st = c_.status[i];
    const TmaSpec& spec = d_.tmas()[st.tma];
    ++st.tma_steps;
    double r = 0.0;
    if (!primitive(spec) || st.edge < 0) {
      r = st.step_reward;
      if (--st.edge_remaining <= 0) arrive(i, st.landing, true, done, dead);
      return r;
    }
    const belief::LinearGaussianModel& model = *spec.model;
    const tma::Tma& t = *spec.tma;
    belief::SimState sim{st.truth, c_.beliefs[i], 0, 0.0};
    sim = belief::lma_step(t.graph.edges[st.edge].lma, sim, model, rng_);
    st.truth = sim.truth;
    c_.beliefs[i] = sim.belief;
    r = sim.accrued_reward;
    ++st.edge_steps;
    if (model.violates(st.truth)) {
      dead.push_back(i);
      return r;
    }
    std::vector<belief::Milestone> stops;
    const bool singleton = t.start_id != t.graph.goal_id;
    for (const auto& m : t.graph.milestones) {
      if (m.id == tma::kFailureId || m.id == st.node || (singleton && m.id == t.start_id)) continue;
      stops.push_back(m);
    }
    const int hit = belief::find_landing(stops, c_.beliefs[i], belief::BeliefNorm{});
    if (hit >= 0) {
      arrive(i, stops[hit].id, false, done, dead);
    } else if (st.edge_steps >= spec.max_edge_steps) {
      dead.push_back(i);
    }
    return r;
  }

  void copy_progress(int from, int to) {
    const AgentStatus& a = c_.status[from];
    AgentStatus& b = c_.status[to];
    b.node = a.node;
    b.edge = a.edge;
    b.landing = a.landing;
    b.edge_remaining = a.edge_remaining;
    b.edge_steps = a.edge_steps;
    b.step_reward = a.step_reward;
    b.tma_steps = a.tma_steps;
    // Stationary joint TMAs may pair agents with different state spaces.
    if (d_.tmas()[a.tma].stationary) return;
    c_.beliefs[to] = c_.beliefs[from];
    if (a.truth.size() > 0) b.truth = a.truth;
  }

  void mirror_follower(int i, std::vector<int>& done, std::vector<int>& dead) {
    const int leader = c_.status[i].partner;
    copy_progress(leader, i);
    if (std::find(done.begin(), done.end(), leader) != done.end()) done.push_back(i);
    if (std::find(dead.begin(), dead.end(), leader) != dead.end()) dead.push_back(i);
  }

  JointConfig& c_;
  const Domain& d_;
  Rng& rng_;
};

}  // namespace

SegmentResult advance_joint(JointConfig& config, std::span<const int> assigned, const Domain& domain, Rng& rng,
                            const StepOptions& opts) {
  Executor ex(config, domain, rng);
  ex.start_assignments(assigned);
  return ex.run(opts);
}

SegmentResult step_joint(const JointConfig& config, std::span<const int> assigned, const Domain& domain, Rng& rng,
                         const StepOptions& opts) {
  JointConfig next = config;
  SegmentResult res = advance_joint(next, assigned, domain, rng, opts);
  res.next = std::move(next);
  return res;
}

RolloutTrace rollout_joint_policy(const policy::JointPolicy& p, const Domain& domain, const EvalConfig& cfg,
                                  Rng& rng) {
  const int n = domain.num_agents();
  if (static_cast<int>(p.controllers.size()) != n) throw ConfigError("one controller per agent required");
  RolloutTrace trace;
  JointConfig c = domain.initial(rng);
  std::vector<int> nodes(n);
  for (int i = 0; i < n; ++i) nodes[i] = p.controllers[i].initial_node;
  const StepOptions opts{cfg.gamma, cfg.max_segment_steps, cfg.on_step};

  for (int k = 0; k < cfg.horizon; ++k) {
    if (std::all_of(c.status.begin(), c.status.end(), [](const AgentStatus& s) { return s.mode == Mode::Dead; })) {
      break;
    }
    std::vector<int> assigned(n, -1);
    for (int i = 0; i < n; ++i) {
      if (c.status[i].mode != Mode::Idle) continue;
      int tma = p.controllers[i].labels[nodes[i]];
      if (!domain.can_initiate(c, i, tma)) {
        const int fb = domain.fallback_tma(i);
        const auto& roster = domain.roster(i);
        if (fb >= 0 && std::find(roster.begin(), roster.end(), fb) != roster.end() && domain.can_initiate(c, i, fb)) {
          tma = fb;
        }
      }
      assigned[i] = tma;
    }
    const long t_k = c.clock;
    SegmentResult seg = advance_joint(c, assigned, domain, rng, opts);
    trace.value += std::pow(cfg.gamma, static_cast<double>(t_k)) * seg.reward;
    for (const StepRecord& s : seg.steps) {
      trace.primitive_value += std::pow(cfg.gamma, static_cast<double>(s.clock)) * s.reward;
    }
    trace.segment_starts.push_back(t_k);
    trace.segment_rewards.push_back(seg.reward);
    std::vector<std::tuple<int, int, int>> moves;
    for (const auto& [i, o] : seg.observations) {
      const int before = nodes[i];
      nodes[i] = p.controllers[i].next(before, domain.observation_index(i, o));
      moves.emplace_back(i, before, nodes[i]);
    }
    trace.node_moves.push_back(std::move(moves));
    ++trace.segments;
    if (seg.stalled) break;
  }
  trace.steps = c.clock;
  trace.metric = domain.metric(c);
  return trace;
}

EvalResult evaluate_joint_policy(const policy::JointPolicy& p, const Domain& domain, const EvalConfig& cfg) {
  if (cfg.n_rollouts < 1) throw ConfigError("evaluate_joint_policy: need at least one rollout");
  EvalResult res;
  res.values.assign(cfg.n_rollouts, 0.0);
  res.metrics.assign(cfg.n_rollouts, 0.0);
  std::vector<double> gaps(cfg.n_rollouts, 0.0);
  auto work = [&](int first, int stride) {
    for (int r = first; r < cfg.n_rollouts; r += stride) {
      Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(r));
      const RolloutTrace t = rollout_joint_policy(p, domain, cfg, rng);
      res.values[r] = t.value;
      res.metrics[r] = t.metric;
      gaps[r] = std::abs(t.value - t.primitive_value);
    }
  };
  const int threads = std::clamp(cfg.threads, 1, cfg.n_rollouts);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  const double n = cfg.n_rollouts;
  res.mean = std::accumulate(res.values.begin(), res.values.end(), 0.0) / n;
  if (cfg.n_rollouts > 1) {
    double ss = 0.0;
    for (double v : res.values) ss += (v - res.mean) * (v - res.mean);
    res.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  res.max_identity_gap = *std::max_element(gaps.begin(), gaps.end());
  return res;
}

std::vector<policy::SuccessorTable> successor_tables(const Domain& domain) {
  std::vector<policy::SuccessorTable> out;
  for (int i = 0; i < domain.num_agents(); ++i) {
    out.push_back(policy::build_successor_table(
        domain.roster(i), domain.observation_count(i),
        [&](int prev, int obs, int next) { return domain.compatible(i, prev, obs, next); }));
  }
  return out;
}

std::map<KernelKey, double> estimate_transition_kernel(const JointConfig& config, std::span<const int> assigned,
                                                       const Domain& domain, int n_sims, Rng& rng,
                                                       const StepOptions& opts) {
  if (n_sims < 1) throw ConfigError("estimate_transition_kernel: need at least one simulation");
  std::map<KernelKey, double> freq;
  for (int s = 0; s < n_sims; ++s) {
    JointConfig c = config;
    const SegmentResult seg = advance_joint(c, assigned, domain, rng, opts);
    KernelKey key;
    key.e_state = c.e_state;
    key.k = seg.tau_min;
    for (const AgentStatus& st : c.status) key.milestones.push_back(st.mode == Mode::Dead ? -1 : st.node);
    freq[key] += 1.0;
  }
  for (auto& [key, v] : freq) v /= n_sims;
  return freq;
}

}  // namespace posmdp::dec

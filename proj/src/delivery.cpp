#include "posmdp/delivery.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "posmdp/error.hpp"
#include "posmdp/json_io.hpp"

namespace posmdp::delivery {

namespace {

using nlohmann::json;

constexpr int kBaseCodes = 14;
constexpr int kAirAlphabet = 2 * kBaseCodes + 4;  // two bases, rendezvous x phi, Dest1, Dest2
constexpr int kGroundAlphabet = 3;

const char* const kLocationNames[] = {"Base1", "Base2", "Dest1", "Dest2", "Rendezvous", "DestR", "InTransit"};

const char* const kTmaNames[] = {"GoToBase1",     "GoToBase2",    "GoToDest1",         "GoToDest2",
                                 "JointGoToDest1", "JointGoToDest2", "PickUp",         "JointPickUp",
                                 "PutDown",       "JointPutDown", "GoToRendezvous[air]", "PlaceOnTruck",
                                 "Wait",          "GoToRendezvous[ground]", "GoToDestR"};

int location_from_name(const std::string& name) {
  for (int i = 0; i < kLocationCount; ++i) {
    if (name == kLocationNames[i]) return i;
  }
  throw ConfigError("unknown location '" + name + "'");
}

int site_of(int dest) { return dest == D1 ? Dest1 : dest == D2 ? Dest2 : DestR; }

bool is_base(int loc) { return loc == Base1 || loc == Base2; }

bool single_move(int t) {
  return t == GoToBase1 || t == GoToBase2 || t == GoToDest1 || t == GoToDest2 || t == GoToRendezvousAir ||
         t == GoToRendezvousGround || t == GoToDestR;
}

bool joint_move(int t) { return t == JointGoToDest1 || t == JointGoToDest2; }

int move_goal(int t) {
  switch (t) {
    case GoToBase1: return Base1;
    case GoToBase2: return Base2;
    case GoToDest1:
    case JointGoToDest1: return Dest1;
    case GoToDest2:
    case JointGoToDest2: return Dest2;
    case GoToRendezvousAir:
    case GoToRendezvousGround: return Rendezvous;
    case GoToDestR: return DestR;
    default: return -1;
  }
}

Box box_from_json(const json& j) {
  return Box{io::vector_from_json(j.at("lo")), io::vector_from_json(j.at("hi"))};
}

void vehicle_from_json(const json& j, DeliveryConfig::Vehicle& v) {
  v.dt = j.value("dt", v.dt);
  v.process_var = j.value("process_var", v.process_var);
  v.obs_var = j.value("obs_var", v.obs_var);
  v.state_weight = j.value("state_weight", v.state_weight);
  v.control_weight = j.value("control_weight", v.control_weight);
}

Vector planar(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

int encode_estate(const WorldState& w) {
  auto code = [](const Package& p) { return p.desc.size == 0 ? 0 : 1 + (p.desc.size - 1) * 3 + p.desc.dest; };
  return code(w.base[0]) * 7 + code(w.base[1]);
}

Package draw(WorldState& w, const PackageDistribution& dist, Rng& rng) {
  Package p;
  p.desc = generate_package(dist, rng);
  if (p.desc.size > 0) {
    p.id = w.next_id++;
    ++w.created;
  }
  return p;
}

}  // namespace

const char* location_name(int loc) {
  if (loc < 0 || loc >= kLocationCount) return "?";
  return kLocationNames[loc];
}

void PackageDistribution::validate() const {
  double total = none;
  bool negative = none < 0.0;
  for (int d = 0; d < 3; ++d) {
    total += small[d] + large[d];
    negative = negative || small[d] < 0.0 || large[d] < 0.0;
  }
  if (negative || std::abs(total - 1.0) > 1e-9) throw ConfigError("package distribution must be a probability vector");
}

PackageDescriptor generate_package(const PackageDistribution& dist, Rng& rng) {
  double u = uniform01(rng);
  if (u < dist.none) return {};
  u -= dist.none;
  for (int size = 1; size <= 2; ++size) {
    const auto& row = size == 1 ? dist.small : dist.large;
    for (int d = 0; d < 3; ++d) {
      if (u < row[d]) return {size, d};
      u -= row[d];
    }
  }
  // Round-off residue falls on the last category with mass.
  for (int d = 2; d >= 0; --d) {
    if (dist.large[d] > 0.0) return {2, d};
  }
  for (int d = 2; d >= 0; --d) {
    if (dist.small[d] > 0.0) return {1, d};
  }
  return {};
}

int base_code(const PackageDescriptor& d, int phi) {
  if (d.size == 0) return phi;
  return 2 + ((d.size - 1) * 3 + d.dest) * 2 + phi;
}

PackageDescriptor decode_base_code(int code, int* phi) {
  if (code < 0 || code >= kBaseCodes) throw std::out_of_range("base observation code");
  if (phi) *phi = code % 2;
  if (code < 2) return {};
  const int k = (code - 2) / 2;
  return {1 + k / 3, k % 3};
}

DeliveryConfig DeliveryConfig::defaults() {
  DeliveryConfig c;
  c.sites[Base1] = planar(0.1, 0.1);
  c.sites[Base2] = planar(0.1, 0.9);
  c.sites[Dest1] = planar(0.9, 0.9);
  c.sites[Dest2] = planar(0.9, 0.5);
  c.sites[Rendezvous] = planar(0.6, 0.1);
  c.sites[DestR] = planar(0.9, 0.1);
  c.workspace = Box{planar(0.0, 0.0), planar(1.0, 1.0)};
  c.regulated = Box{planar(0.75, 0.0), planar(1.0, 0.25)};
  c.obstacles = {Box{planar(0.4, 0.35), planar(0.55, 0.65)}};
  c.sampling.nodes = 8;
  c.sampling.neighbors = 5;
  c.sampling.sims_per_edge = 100;
  c.sampling.epsilon = 0.05;
  c.sampling.max_steps = 500;
  c.sampling.failure_value = c.failure_value;
  return c;
}

DeliveryConfig DeliveryConfig::from_json(const json& j) {
  DeliveryConfig c = defaults();
  try {
    if (j.contains("sites")) {
      for (const auto& [name, v] : j["sites"].items()) {
        const int loc = location_from_name(name);
        if (loc == InTransit) throw ConfigError("InTransit is not a site");
        c.sites[loc] = io::vector_from_json(v);
        if (c.sites[loc].size() != 2) throw ConfigError("site coordinates must be planar");
      }
    }
    if (j.contains("workspace")) c.workspace = box_from_json(j["workspace"]);
    if (j.contains("regulated")) c.regulated = box_from_json(j["regulated"]);
    if (j.contains("obstacles")) {
      c.obstacles.clear();
      for (const json& b : j["obstacles"]) c.obstacles.push_back(box_from_json(b));
    }
    c.colocation_radius = j.value("colocation_radius", c.colocation_radius);
    if (j.contains("air")) vehicle_from_json(j["air"], c.air);
    if (j.contains("ground")) vehicle_from_json(j["ground"], c.ground);
    if (j.contains("roadmap")) {
      const json& r = j["roadmap"];
      c.sampling.nodes = r.value("nodes", c.sampling.nodes);
      c.sampling.neighbors = r.value("neighbors", c.sampling.neighbors);
      c.sampling.sims_per_edge = r.value("sims_per_edge", c.sampling.sims_per_edge);
      c.sampling.epsilon = r.value("epsilon", c.sampling.epsilon);
      c.sampling.max_steps = r.value("max_steps", c.sampling.max_steps);
      c.sampling.threads = r.value("threads", c.sampling.threads);
      c.tma_seed = r.value("seed", c.tma_seed);
    }
    if (j.contains("durations")) {
      const json& d = j["durations"];
      c.pickup_steps = d.value("pickup", c.pickup_steps);
      c.putdown_steps = d.value("putdown", c.putdown_steps);
      c.handoff_steps = d.value("handoff", c.handoff_steps);
      c.wait_steps = d.value("wait", c.wait_steps);
    }
    c.join_window = j.value("join_window", c.join_window);
    if (j.contains("rewards")) {
      const json& r = j["rewards"];
      c.delivery_bonus = r.value("delivery_bonus", c.delivery_bonus);
      c.step_cost = r.value("step_cost", c.step_cost);
      c.failure_value = r.value("failure_value", c.failure_value);
    }
    c.sampling.failure_value = c.failure_value;
    if (j.contains("packages")) {
      const json& p = j["packages"];
      c.packages.none = p.value("none", c.packages.none);
      for (int d = 0; d < 3; ++d) {
        if (p.contains("small")) c.packages.small[d] = p["small"].at(d).get<double>();
        if (p.contains("large")) c.packages.large[d] = p["large"].at(d).get<double>();
      }
    }
    const std::string mode = j.value("execution", std::string("graph"));
    if (mode != "graph" && mode != "primitive") throw ConfigError("execution must be 'graph' or 'primitive'");
    c.primitive_execution = mode == "primitive";
    if (j.contains("initial_locations")) {
      const auto names = j["initial_locations"].get<std::vector<std::string>>();
      if (names.size() != 3) throw ConfigError("initial_locations needs one entry per robot");
      for (int i = 0; i < 3; ++i) c.initial_location[i] = location_from_name(names[i]);
    }
    c.gamma = j.value("gamma", c.gamma);
    c.horizon = j.value("horizon", c.horizon);
    c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
    c.n_nodes = j.value("n_nodes", c.n_nodes);
    if (j.contains("search")) {
      const json& s = j["search"];
      c.search.K_d = s.value("K_d", c.search.K_d);
      c.search.iter_max_MMCS = s.value("iter_max_MMCS", c.search.iter_max_MMCS);
      c.search.iter_max_MC = s.value("iter_max_MC", c.search.iter_max_MC);
      c.search.mask_frequency_threshold = s.value("mask_frequency_threshold", c.search.mask_frequency_threshold);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad delivery config: ") + e.what());
  }
  c.packages.validate();
  return c;
}

const WorldState& world(const dec::JointConfig& c) { return std::any_cast<const WorldState&>(c.world); }
WorldState& world(dec::JointConfig& c) { return std::any_cast<WorldState&>(c.world); }

double delivery_reward(const PackageDescriptor& pkg, int loc, const DeliveryConfig& cfg) {
  return pkg.size > 0 && site_of(pkg.dest) == loc ? cfg.delivery_bonus : 0.0;
}

DeliveryDomain::DeliveryDomain(DeliveryConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.packages.validate();
  if (cfg_.join_window < 0) throw ConfigError("join_window must be non-negative");
  for (int loc : cfg_.initial_location) {
    if (loc == InTransit) throw ConfigError("robots must start at a site");
  }
  if (cfg_.initial_location[2] != Rendezvous && cfg_.initial_location[2] != DestR) {
    throw ConfigError("the ground robot starts at Rendezvous or DestR");
  }
  for (int i = 0; i < 2; ++i) {
    if (cfg_.initial_location[i] == DestR) throw ConfigError("air robots cannot start inside the regulated airspace");
  }
  kinds_ = {RobotKind::Air, RobotKind::Air, RobotKind::Ground};
  for (int t = GoToBase1; t <= Wait; ++t) air_roster_.push_back(t);
  ground_roster_ = {GoToRendezvousGround, GoToDestR, PlaceOnTruck, PutDown, Wait};

  ModelSpec air = double_integrator_2d(cfg_.air.dt, cfg_.air.process_var, cfg_.air.obs_var);
  air.step_reward = StepRewardSpec{cfg_.step_cost, 0.0};
  air.constraints.position_dims = {0, 1};
  air.constraints.bounds = cfg_.workspace;
  air.constraints.obstacles = cfg_.obstacles;
  air.constraints.obstacles.push_back(cfg_.regulated);
  ModelSpec ground = single_integrator_2d(cfg_.ground.dt, cfg_.ground.process_var, cfg_.ground.obs_var);
  ground.step_reward = StepRewardSpec{cfg_.step_cost, 0.0};
  ground.constraints.position_dims = {0, 1};
  ground.constraints.bounds = cfg_.workspace;
  air_model_ = std::make_shared<belief::LinearGaussianModel>(air.build());
  ground_model_ = std::make_shared<belief::LinearGaussianModel>(ground.build());
  air_P_ = belief::stationary_covariance(*air_model_);
  ground_P_ = belief::stationary_covariance(*ground_model_);
  for (int loc = 0; loc < InTransit; ++loc) {
    if (loc != DestR && air.constraints.violates_position(cfg_.sites[loc])) {
      throw ConfigError(std::string("air site ") + location_name(loc) + " violates the air constraints");
    }
  }
  if (!air.constraints.violates_position(cfg_.sites[DestR])) {
    throw ConfigError("DestR must lie inside the regulated airspace");
  }

  auto movement = [&](int id, RobotKind kind) {
    const bool is_air = kind == RobotKind::Air;
    const auto& model = is_air ? *air_model_ : *ground_model_;
    const auto& v = is_air ? cfg_.air : cfg_.ground;
    const int goal = move_goal(id);
    const std::vector<int> sites =
        is_air ? std::vector<int>{Base1, Base2, Dest1, Dest2, Rendezvous} : std::vector<int>{Rendezvous, DestR};
    tma::SamplingConfig sc = cfg_.sampling;
    sc.workspace_lo = cfg_.workspace.lo;
    sc.workspace_hi = cfg_.workspace.hi;
    sc.sample_dims = {0, 1};
    const int n = model.state_dim();
    sc.gain = belief::LqrGain{v.state_weight * Matrix::Identity(n, n),
                              v.control_weight * Matrix::Identity(model.control_dim(), model.control_dim())};
    // The first other site is the start singleton; the rest become anchors.
    int start_site = -1;
    for (int s : sites) {
      if (s == goal) continue;
      if (start_site < 0) {
        start_site = s;
      } else {
        sc.anchors.push_back(site_belief(kind, s).mean);
      }
    }
    Rng rng = make_rng(cfg_.tma_seed, static_cast<std::uint64_t>(id));
    auto t = std::make_shared<tma::Tma>(
        tma::construct_tma(site_belief(kind, start_site), site_belief(kind, goal).mean, model, sc, rng));
    t->availability = {is_air ? "air robot available" : "ground robot available"};
    return t;
  };
  auto fixed = [&](int steps) {
    return std::make_shared<tma::Tma>(tma::make_fixed_duration_tma(4, steps, cfg_.step_cost, 0.0, cfg_.failure_value));
  };

  tmas_.resize(kTmaCount);
  std::shared_ptr<const tma::Tma> graphs[kTmaCount];
  for (int id : {GoToBase1, GoToBase2, GoToDest1, GoToDest2, GoToRendezvousAir}) graphs[id] = movement(id, RobotKind::Air);
  for (int id : {GoToRendezvousGround, GoToDestR}) graphs[id] = movement(id, RobotKind::Ground);
  graphs[JointGoToDest1] = graphs[GoToDest1];
  graphs[JointGoToDest2] = graphs[GoToDest2];
  graphs[PickUp] = fixed(cfg_.pickup_steps);
  graphs[JointPickUp] = graphs[PickUp];
  graphs[PutDown] = fixed(cfg_.putdown_steps);
  graphs[JointPutDown] = graphs[PutDown];
  graphs[PlaceOnTruck] = fixed(cfg_.handoff_steps);
  graphs[Wait] = fixed(cfg_.wait_steps);
  for (int id = 0; id < kTmaCount; ++id) {
    dec::TmaSpec& s = tmas_[id];
    s.name = kTmaNames[id];
    s.tma = graphs[id];
    s.stationary = !(single_move(id) || joint_move(id));
    if (!s.stationary && cfg_.primitive_execution) {
      s.model = (id == GoToRendezvousGround || id == GoToDestR) ? ground_model_ : air_model_;
      s.max_edge_steps = cfg_.sampling.max_steps;
    }
    s.agents_required = (joint_move(id) || id == JointPickUp || id == JointPutDown || id == PlaceOnTruck) ? 2 : 1;
    const int goal = move_goal(id);
    s.terminal_label = goal >= 0 ? location_name(goal) : s.name;
  }
  rewards_.discount = cfg_.gamma;
}

std::string DeliveryDomain::agent_name(int agent) const {
  return kinds_.at(agent) == RobotKind::Air ? "air" + std::to_string(agent + 1) : "ground";
}

const std::vector<int>& DeliveryDomain::roster(int agent) const {
  return kinds_.at(agent) == RobotKind::Air ? air_roster_ : ground_roster_;
}

int DeliveryDomain::observation_count(int agent) const {
  return kinds_.at(agent) == RobotKind::Air ? kAirAlphabet : kGroundAlphabet;
}

int DeliveryDomain::observation_location(int agent, int obs) const {
  if (obs < 0 || obs >= observation_count(agent)) throw std::out_of_range("observation index");
  if (kinds_[agent] == RobotKind::Ground) return obs < 2 ? Rendezvous : DestR;
  if (obs < kBaseCodes) return Base1;
  if (obs < 2 * kBaseCodes) return Base2;
  const int k = obs - 2 * kBaseCodes;
  return k < 2 ? Rendezvous : (k == 2 ? Dest1 : Dest2);
}

std::string DeliveryDomain::observation_name(int agent, int index) const {
  const int loc = observation_location(agent, index);
  std::ostringstream out;
  out << location_name(loc);
  if (is_base(loc) && kinds_[agent] == RobotKind::Air) {
    int phi = 0;
    const PackageDescriptor d = decode_base_code(index % kBaseCodes, &phi);
    static const char* dests[] = {"d1", "d2", "dr"};
    out << ':' << (d.size == 0 ? "none" : (d.size == 1 ? "small-" : "large-"));
    if (d.size > 0) out << dests[d.dest];
    out << ":phi" << phi;
  } else if (loc == Rendezvous) {
    out << ":phi" << (kinds_[agent] == RobotKind::Air ? (index - 2 * kBaseCodes) : index);
  }
  return out.str();
}

bool DeliveryDomain::compatible(int agent, int prev, int obs, int next) const {
  const int loc = observation_location(agent, obs);
  // A movement never starts inside its own goal region.
  if (move_goal(next) == loc) return false;
  if (kinds_[agent] == RobotKind::Ground) {
    switch (next) {
      case PlaceOnTruck: return loc == Rendezvous && prev != PlaceOnTruck;
      case PutDown: return loc == DestR && prev != PutDown;
      default: return true;
    }
  }
  PackageDescriptor seen;
  if (is_base(loc)) seen = decode_base_code(obs % kBaseCodes, nullptr);
  const bool carries_large = joint_move(prev);  // a joint transport always ends loaded
  const bool picked = prev == PickUp || prev == JointPickUp;
  switch (next) {
    case GoToBase1:
    case GoToBase2:
    case GoToDest1:
    case GoToDest2:
    case GoToRendezvousAir: return !carries_large;
    case JointGoToDest1:
    case JointGoToDest2:
      return joint_move(prev) || prev == Wait || (prev == JointPickUp && is_base(loc) && seen.size == 2);
    case PickUp: return is_base(loc) && seen.size == 1 && !picked;
    case JointPickUp: return is_base(loc) && seen.size == 2 && !picked;
    case PutDown:
      return (loc == Dest1 || loc == Dest2) && prev != PutDown && prev != JointPutDown && !carries_large;
    case JointPutDown: return (loc == Dest1 || loc == Dest2) && (joint_move(prev) || prev == Wait);
    case PlaceOnTruck: return loc == Rendezvous && prev != PlaceOnTruck;
    case Wait: return true;
    default: return false;
  }
}

belief::GaussianBelief DeliveryDomain::site_belief(RobotKind kind, int loc) const {
  if (loc < 0 || loc >= InTransit) throw std::out_of_range("site index");
  if (kind == RobotKind::Air) {
    Vector m = Vector::Zero(4);
    m.head(2) = cfg_.sites[loc];
    return {m, air_P_};
  }
  return {cfg_.sites[loc], ground_P_};
}

dec::JointConfig DeliveryDomain::initial(Rng& rng) const {
  dec::JointConfig c;
  WorldState w;
  for (int b = 0; b < 2; ++b) {
    w.base[b] = draw(w, cfg_.packages, rng);
    if (w.base[b].desc.size == 0) w.refill_at[b] = 1;
  }
  const int n = num_agents();
  w.location.assign(cfg_.initial_location.begin(), cfg_.initial_location.begin() + n);
  w.carrying.assign(n, Package{});
  w.just_picked.assign(n, 0);
  for (int i = 0; i < n; ++i) c.beliefs.push_back(site_belief(kinds_[i], w.location[i]));
  c.status.resize(n);
  c.e_state = encode_estate(w);
  c.world = std::move(w);
  return c;
}

bool DeliveryDomain::can_initiate(const dec::JointConfig& c, int agent, int tma) const {
  const WorldState& w = world(c);
  const int loc = w.location[agent];
  const Package& load = w.carrying[agent];
  const bool air = kinds_[agent] == RobotKind::Air;
  if (move_goal(tma) == loc) return false;
  if (single_move(tma)) return load.desc.size != 2;
  if (joint_move(tma)) return air && load.desc.size == 2;
  switch (tma) {
    case PickUp: return air && is_base(loc) && w.base[loc].desc.size == 1 && load.id < 0;
    case JointPickUp: return air && is_base(loc) && w.base[loc].desc.size == 2 && load.id < 0;
    case PutDown: return load.desc.size == 1 && (air ? (loc == Dest1 || loc == Dest2) : loc == DestR);
    case JointPutDown: return air && load.desc.size == 2 && (loc == Dest1 || loc == Dest2);
    case PlaceOnTruck: return loc == Rendezvous && (air ? load.desc.size == 1 : load.id < 0);
    case Wait: return true;
    default: return false;
  }
}

bool DeliveryDomain::can_partner(const dec::JointConfig& c, int a, int b, int tma) const {
  const WorldState& w = world(c);
  if (c.status[a].mode == dec::Mode::Dead || c.status[b].mode == dec::Mode::Dead) return false;
  if (w.location[a] != w.location[b] || w.location[a] == InTransit) return false;
  const bool air_a = kinds_[a] == RobotKind::Air, air_b = kinds_[b] == RobotKind::Air;
  switch (tma) {
    case JointPickUp: return air_a && air_b && w.carrying[a].id < 0 && w.carrying[b].id < 0;
    case JointGoToDest1:
    case JointGoToDest2:
    case JointPutDown:
      return air_a && air_b && w.carrying[a].desc.size == 2 && w.carrying[a].id == w.carrying[b].id;
    case PlaceOnTruck: {
      if (air_a == air_b) return false;
      const int air = air_a ? a : b, ground = air_a ? b : a;
      return w.carrying[air].desc.size == 1 && w.carrying[ground].id < 0;
    }
    default: return false;
  }
}

void DeliveryDomain::on_start(dec::JointConfig& c, int agent, int tma, Rng&) const {
  if (single_move(tma) || joint_move(tma)) world(c).location[agent] = InTransit;
}

double DeliveryDomain::on_terminate(dec::JointConfig& c, int agent, int tma, bool succeeded, Rng&) const {
  if (!succeeded) return 0.0;  // hold timed out: nothing happened
  WorldState& w = world(c);
  const int partner = c.status[agent].partner;
  if (single_move(tma) || joint_move(tma)) {
    w.location[agent] = move_goal(tma);
    return 0.0;
  }
  const int loc = w.location[agent];
  double reward = 0.0;
  auto put_down = [&](const Package& p) {
    const double r = delivery_reward(p.desc, loc, cfg_);
    if (r > 0.0) {
      ++w.delivered[p.desc.dest];
    } else {
      ++w.destroyed;
    }
    return r;
  };
  switch (tma) {
    case PickUp:
      w.carrying[agent] = w.base[loc];
      w.base[loc] = Package{};
      w.refill_at[loc] = w.segment + 2;
      w.just_picked[agent] = 1;
      break;
    case JointPickUp:
      // Partners are reported one after the other; the first report moves the package.
      if (w.carrying[agent].id < 0 && w.base[loc].id >= 0) {
        w.carrying[agent] = w.carrying[partner] = w.base[loc];
        w.base[loc] = Package{};
        w.refill_at[loc] = w.segment + 2;
      }
      w.just_picked[agent] = 1;
      break;
    case PutDown:
      reward = put_down(w.carrying[agent]);
      w.carrying[agent] = Package{};
      break;
    case JointPutDown:
      if (w.carrying[agent].id >= 0) {
        reward = put_down(w.carrying[agent]);
        w.carrying[agent] = w.carrying[partner] = Package{};
      }
      break;
    case PlaceOnTruck: {
      const int air = kinds_[agent] == RobotKind::Air ? agent : partner;
      const int ground = air == agent ? partner : agent;
      if (w.carrying[air].id >= 0) {
        w.carrying[ground] = w.carrying[air];
        w.carrying[air] = Package{};
      }
      break;
    }
    default: break;
  }
  c.e_state = encode_estate(w);
  return reward;
}

void DeliveryDomain::on_segment_end(dec::JointConfig& c, Rng& rng) const {
  WorldState& w = world(c);
  ++w.segment;
  std::fill(w.just_picked.begin(), w.just_picked.end(), 0);
  // A base emptied by a pick-up is redrawn one macro step later; an empty draw
  // is retried at every following segment end.
  for (int b = 0; b < 2; ++b) {
    if (w.refill_at[b] < 0 || w.segment < w.refill_at[b]) continue;
    w.base[b] = draw(w, cfg_.packages, rng);
    w.refill_at[b] = w.base[b].desc.size == 0 ? w.segment + 1 : -1;
  }
  c.e_state = encode_estate(w);
}

int observe_estate(const DeliveryDomain& d, const dec::JointConfig& c, int robot) {
  const WorldState& w = world(c);
  const int loc = w.location[robot];
  if (loc == InTransit) return kNullObservation;
  int phi = 0;
  const Vector& here = c.beliefs[robot].mean;
  for (int j = 0; j < d.num_agents(); ++j) {
    if (j == robot || c.status[j].mode == dec::Mode::Dead || w.location[j] == InTransit) continue;
    const double dist = (c.beliefs[j].mean.head(2) - here.head(2)).norm();
    if (w.location[j] == loc || dist <= d.config().colocation_radius) phi = 1;
  }
  if (d.kind(robot) == RobotKind::Ground) {
    if (loc == Rendezvous) return phi;
    if (loc == DestR) return 2;
    throw std::logic_error("ground robot at an air-only site");
  }
  if (is_base(loc)) {
    const PackageDescriptor desc = w.just_picked[robot] ? w.carrying[robot].desc : w.base[loc].desc;
    return loc * kBaseCodes + base_code(desc, phi);
  }
  switch (loc) {
    case Rendezvous: return 2 * kBaseCodes + phi;
    case Dest1: return 2 * kBaseCodes + 2;
    case Dest2: return 2 * kBaseCodes + 3;
    default: throw std::logic_error("air robot inside the regulated airspace");
  }
}

int DeliveryDomain::observe(const dec::JointConfig& c, int agent) const { return observe_estate(*this, c, agent); }

double DeliveryDomain::metric(const dec::JointConfig& c) const {
  const WorldState& w = world(c);
  return w.delivered[0] + w.delivered[1] + w.delivered[2];
}

dec::EvalConfig DeliveryDomain::eval_defaults() const {
  dec::EvalConfig e;
  e.gamma = cfg_.gamma;
  e.horizon = cfg_.horizon;
  e.n_rollouts = cfg_.n_rollouts;
  return e;
}

std::vector<std::string> DeliveryDomain::tma_names() const {
  return std::vector<std::string>(std::begin(kTmaNames), std::end(kTmaNames));
}

std::string audit(const dec::JointConfig& c, const DeliveryDomain& d) {
  const WorldState& w = world(c);
  std::ostringstream err;
  std::set<int> ids;
  std::map<int, int> holders;
  int at_bases = 0;
  for (const Package& p : w.base) {
    if (p.id < 0) continue;
    ++at_bases;
    if (!ids.insert(p.id).second) err << "package " << p.id << " appears twice; ";
  }
  for (int i = 0; i < d.num_agents(); ++i) {
    const Package& p = w.carrying[i];
    if (p.id < 0) continue;
    if (d.kind(i) == RobotKind::Ground && p.desc.size == 2) err << "ground robot carries a large package; ";
    holders[p.id] += 1;
  }
  for (const auto& [id, n] : holders) {
    if (!ids.insert(id).second) err << "carried package " << id << " is also at a base; ";
  }
  for (int i = 0; i < d.num_agents(); ++i) {
    const Package& p = w.carrying[i];
    if (p.id < 0) continue;
    const int want = p.desc.size == 2 ? 2 : 1;
    if (holders[p.id] != want) err << "package " << p.id << " held by " << holders[p.id] << " robots; ";
  }
  const int delivered = w.delivered[0] + w.delivered[1] + w.delivered[2];
  const int accounted = at_bases + static_cast<int>(holders.size()) + delivered + w.destroyed;
  if (accounted != w.created) {
    err << "created " << w.created << " but accounted " << accounted << "; ";
  }
  return err.str();
}

}  // namespace posmdp::delivery

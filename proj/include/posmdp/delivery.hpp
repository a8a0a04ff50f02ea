#pragma once

// Package delivery with two air robots and one ground robot.
//
// Packages appear at two bases. Small packages need one air robot, large ones
// need both (joint pick-up, joint transport, joint put-down). Packages for the
// destination inside the regulated airspace are handed to the ground robot at
// the rendezvous, which drives them there. A team reward is paid only when a
// package is put down at its own destination.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "posmdp/decposmdp.hpp"
#include "posmdp/model_spec.hpp"
#include "posmdp/search.hpp"

namespace posmdp::delivery {

enum Location : int { Base1, Base2, Dest1, Dest2, Rendezvous, DestR, InTransit, kLocationCount };
enum Destination : int { D1, D2, DR };
enum class RobotKind { Air, Ground };

const char* location_name(int loc);

/// size 0 means no package (destination then normalised to D1).
struct PackageDescriptor {
  int size = 0;
  int dest = D1;
  bool operator==(const PackageDescriptor&) const = default;
};

struct Package {
  PackageDescriptor desc;
  int id = -1;
};

/// Categorical distribution over package descriptors.
struct PackageDistribution {
  double none = 0.1;
  std::array<double, 3> small{0.3, 0.25, 0.15};  // per destination
  std::array<double, 3> large{0.1, 0.1, 0.0};

  void validate() const;
};

PackageDescriptor generate_package(const PackageDistribution& dist, Rng& rng);

struct WorldState {
  std::array<Package, 2> base;
  std::array<long, 2> refill_at{-1, -1};  // segment index of the next draw, -1 when full
  std::vector<int> location;
  std::vector<Package> carrying;          // id -1 when empty; a large package sits on both air robots
  std::vector<char> just_picked;
  std::array<int, 3> delivered{0, 0, 0};
  int created = 0;
  int destroyed = 0;  // put down at a wrong destination
  long segment = 0;
  int next_id = 0;
};

enum TmaId : int {
  GoToBase1,
  GoToBase2,
  GoToDest1,
  GoToDest2,
  JointGoToDest1,
  JointGoToDest2,
  PickUp,
  JointPickUp,
  PutDown,
  JointPutDown,
  GoToRendezvousAir,
  PlaceOnTruck,
  Wait,
  GoToRendezvousGround,
  GoToDestR,
  kTmaCount
};

struct DeliveryConfig {
  std::array<Vector, 6> sites;  // planar coordinates per Location (InTransit excluded)
  Box workspace;
  Box regulated;
  std::vector<Box> obstacles;   // air-only obstacles
  double colocation_radius = 0.05;

  struct Vehicle {
    double dt = 0.5;
    double process_var = 1e-6;
    double obs_var = 1e-5;
    double state_weight = 1.0;    // LQR weights, scaled identities
    double control_weight = 1.0;
  };
  Vehicle air;
  Vehicle ground;

  tma::SamplingConfig sampling;   // roadmap settings shared by all movement TMAs
  std::uint64_t tma_seed = 7;

  int pickup_steps = 3;
  int putdown_steps = 3;
  int handoff_steps = 3;
  int wait_steps = 3;
  long join_window = 6;

  double delivery_bonus = 10.0;
  double step_cost = -0.01;
  double failure_value = -100.0;

  PackageDistribution packages;
  bool primitive_execution = false;
  std::array<int, 3> initial_location{Base1, Base1, DestR};

  double gamma = 0.99;
  int horizon = 50;
  int n_rollouts = 100;
  int n_nodes = 13;
  search::SearchConfig search;

  static DeliveryConfig defaults();
  static DeliveryConfig from_json(const nlohmann::json& j);
};

/// Observation alphabet. Air: 14 codes per base, two at the rendezvous (phi),
/// one null at each destination. Ground: two at the rendezvous, null at DestR.
int base_code(const PackageDescriptor& d, int phi);
PackageDescriptor decode_base_code(int code, int* phi);

class DeliveryDomain : public dec::Domain {
 public:
  explicit DeliveryDomain(DeliveryConfig cfg);

  int num_agents() const override { return static_cast<int>(kinds_.size()); }
  std::string agent_name(int agent) const override;
  const std::vector<dec::TmaSpec>& tmas() const override { return tmas_; }
  const std::vector<int>& roster(int agent) const override;
  int observation_count(int agent) const override;
  std::string observation_name(int agent, int index) const override;
  bool compatible(int agent, int prev, int obs, int next) const override;
  dec::JointConfig initial(Rng& rng) const override;
  bool can_initiate(const dec::JointConfig& c, int agent, int tma) const override;
  bool can_partner(const dec::JointConfig& c, int a, int b, int tma) const override;
  void on_start(dec::JointConfig& c, int agent, int tma, Rng& rng) const override;
  double on_terminate(dec::JointConfig& c, int agent, int tma, bool succeeded, Rng& rng) const override;
  void on_segment_end(dec::JointConfig& c, Rng& rng) const override;
  int observe(const dec::JointConfig& c, int agent) const override;
  int fallback_tma(int) const override { return Wait; }
  double hold_step_reward(int) const override { return cfg_.step_cost; }
  long join_window() const override { return cfg_.join_window; }
  const dec::RewardSpec& rewards() const override { return rewards_; }
  /// Packages delivered to their destination.
  double metric(const dec::JointConfig& c) const override;

  RobotKind kind(int agent) const { return kinds_.at(agent); }
  const DeliveryConfig& config() const { return cfg_; }
  dec::EvalConfig eval_defaults() const;
  std::vector<std::string> tma_names() const;
  /// Location of the observation class (Base1, ..., DestR).
  int observation_location(int agent, int obs) const;
  /// Belief of a robot standing still at a site.
  belief::GaussianBelief site_belief(RobotKind kind, int loc) const;

 private:
  DeliveryConfig cfg_;
  std::vector<RobotKind> kinds_;
  std::vector<int> air_roster_;
  std::vector<int> ground_roster_;
  std::vector<dec::TmaSpec> tmas_;
  std::shared_ptr<const belief::LinearGaussianModel> air_model_;
  std::shared_ptr<const belief::LinearGaussianModel> ground_model_;
  Matrix air_P_, ground_P_;
  dec::RewardSpec rewards_;
};

const WorldState& world(const dec::JointConfig& c);
WorldState& world(dec::JointConfig& c);

/// Team reward for a put-down of `pkg` at `loc`: the bonus iff loc is its destination.
double delivery_reward(const PackageDescriptor& pkg, int loc, const DeliveryConfig& cfg);

/// A robot between sites sees nothing. Never emitted by rollouts, which
/// observe only at TMA termination.
inline constexpr int kNullObservation = -1;

/// Environment observation of a robot (see observation alphabet above).
int observe_estate(const DeliveryDomain& d, const dec::JointConfig& c, int robot);

/// Empty string when the package ledger balances and carry rules hold.
std::string audit(const dec::JointConfig& c, const DeliveryDomain& d);

}  // namespace posmdp::delivery

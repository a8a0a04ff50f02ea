#pragma once

// Finite-state controllers over TMAs.
//
// Node labelling convention: an agent whose roster has R TMAs gets nodes
// 0..R-1 labelled roster[0..R-1] in order; nodes R..n_nodes-1 are free and
// carry any roster TMA. Every edge (node, observation class) points at a node
// whose TMA is a valid successor of the source node's TMA.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "posmdp/rng.hpp"

namespace posmdp::policy {

using BigInt = boost::multiprecision::cpp_int;

struct PolicyController {
  std::vector<int> labels;  // TMA id of each node
  int alphabet = 0;         // observation classes per node
  std::vector<int> edges;   // row-major n_nodes x alphabet table of target nodes
  int initial_node = 0;

  int n_nodes() const { return static_cast<int>(labels.size()); }
  int next(int node, int obs) const { return edges[static_cast<std::size_t>(node) * alphabet + obs]; }
  int& edge(int node, int obs) { return edges[static_cast<std::size_t>(node) * alphabet + obs]; }
  bool operator==(const PolicyController&) const = default;
};

struct JointPolicy {
  std::vector<PolicyController> controllers;
  bool operator==(const JointPolicy&) const = default;
};

/// Valid successor sets of one agent: allowed[p][o] lists roster positions
/// that may follow roster position p after observation class o.
struct SuccessorTable {
  std::vector<int> roster;
  int alphabet = 0;
  std::vector<std::vector<std::vector<int>>> allowed;

  int position(int tma) const;  // -1 if not in the roster
  bool allows(int prev_tma, int obs, int next_tma) const;
};

using Compatibility = std::function<bool(int prev_tma, int obs, int next_tma)>;

/// Throws NoValidSuccessor when some (TMA, observation) has no successor.
SuccessorTable build_successor_table(const std::vector<int>& roster, int alphabet,
                                     const Compatibility& compatible);

struct ControllerMask {
  std::map<std::pair<int, int>, int> edges;  // (node, obs) -> forced target node
  std::map<int, int> labels;                 // free node -> forced TMA id

  bool empty() const { return edges.empty() && labels.empty(); }
  bool operator==(const ControllerMask&) const = default;
};

struct Mask {
  std::vector<ControllerMask> agents;
};

/// Free-node labels and unmasked edges are drawn uniformly (labels over the
/// roster, edges over the nodes whose TMA is a valid successor). A masked
/// edge is copied when its target is still valid under the drawn labels.
PolicyController sample_valid_controller(const SuccessorTable& table, int n_nodes,
                                         const ControllerMask* mask, Rng& rng);

JointPolicy sample_joint_policy(const std::vector<SuccessorTable>& tables, int n_nodes,
                                const Mask* mask, Rng& rng);

/// Empty string when valid, otherwise the first violated rule.
std::string validate_controller(const PolicyController& c, const SuccessorTable& table);
std::string validate_joint_policy(const JointPolicy& p, const std::vector<SuccessorTable>& tables);

/// Number of controllers under the labelling convention above.
BigInt controller_space_cardinality(int n_nodes, const SuccessorTable& table);
BigInt controller_space_cardinality(int n_nodes, const std::vector<SuccessorTable>& tables);

/// Visits every controller of one agent; meant for small spaces.
void enumerate_controllers(const SuccessorTable& table, int n_nodes,
                           const std::function<void(const PolicyController&)>& visit);

/// Visits every joint policy (product of the per-agent spaces).
void enumerate_joint_policies(const std::vector<SuccessorTable>& tables, int n_nodes,
                              const std::function<void(const JointPolicy&)>& visit);

inline constexpr const char* kPolicyFormat = "posmdp.policy";
inline constexpr int kPolicyVersion = 1;

/// `tma_names` (indexed by TMA id) is written alongside the labels for reading.
nlohmann::json to_json(const JointPolicy& p, const std::vector<std::string>& tma_names = {});
JointPolicy joint_policy_from_json(const nlohmann::json& j);

}  // namespace posmdp::policy

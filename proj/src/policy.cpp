#include "posmdp/policy.hpp"

#include <algorithm>
#include <sstream>

#include "posmdp/error.hpp"

namespace posmdp::policy {

namespace {

void check_nodes(const SuccessorTable& table, int n_nodes) {
  if (n_nodes < static_cast<int>(table.roster.size())) {
    throw ConfigError("n_nodes must be at least the roster size");
  }
}

// Nodes whose label is a valid successor of `from_label` under `obs`.
std::vector<int> valid_targets(const SuccessorTable& table, const std::vector<int>& labels,
                               int from_label, int obs) {
  std::vector<int> out;
  for (int m = 0; m < static_cast<int>(labels.size()); ++m) {
    if (table.allows(from_label, obs, labels[m])) out.push_back(m);
  }
  return out;
}

BigInt ipow(BigInt base, int exp) {
  BigInt r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

BigInt factorial(int n) {
  BigInt r = 1;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

}  // namespace

int SuccessorTable::position(int tma) const {
  auto it = std::find(roster.begin(), roster.end(), tma);
  return it == roster.end() ? -1 : static_cast<int>(it - roster.begin());
}

bool SuccessorTable::allows(int prev_tma, int obs, int next_tma) const {
  const int p = position(prev_tma);
  const int q = position(next_tma);
  if (p < 0 || q < 0 || obs < 0 || obs >= alphabet) return false;
  const auto& a = allowed[p][obs];
  return std::binary_search(a.begin(), a.end(), q);
}

SuccessorTable build_successor_table(const std::vector<int>& roster, int alphabet,
                                     const Compatibility& compatible) {
  if (roster.empty()) throw ConfigError("roster must not be empty");
  if (alphabet < 1) throw ConfigError("observation alphabet must not be empty");
  SuccessorTable t;
  t.roster = roster;
  t.alphabet = alphabet;
  const int R = static_cast<int>(roster.size());
  t.allowed.assign(R, std::vector<std::vector<int>>(alphabet));
  for (int p = 0; p < R; ++p) {
    for (int o = 0; o < alphabet; ++o) {
      for (int q = 0; q < R; ++q) {
        if (compatible(roster[p], o, roster[q])) t.allowed[p][o].push_back(q);
      }
      if (t.allowed[p][o].empty()) {
        std::ostringstream msg;
        msg << "TMA " << roster[p] << " has no valid successor after observation " << o;
        throw NoValidSuccessor(msg.str());
      }
    }
  }
  return t;
}

PolicyController sample_valid_controller(const SuccessorTable& table, int n_nodes,
                                         const ControllerMask* mask, Rng& rng) {
  check_nodes(table, n_nodes);
  const int R = static_cast<int>(table.roster.size());
  PolicyController c;
  c.alphabet = table.alphabet;
  c.labels = table.roster;
  for (int node = R; node < n_nodes; ++node) {
    int label = table.roster[uniform_index(rng, R)];
    if (mask) {
      if (auto it = mask->labels.find(node); it != mask->labels.end()) label = it->second;
    }
    c.labels.push_back(label);
  }
  c.edges.assign(static_cast<std::size_t>(n_nodes) * c.alphabet, 0);
  for (int node = 0; node < n_nodes; ++node) {
    for (int o = 0; o < c.alphabet; ++o) {
      const std::vector<int> targets = valid_targets(table, c.labels, c.labels[node], o);
      int chosen = -1;
      if (mask) {
        if (auto it = mask->edges.find({node, o}); it != mask->edges.end()) {
          if (std::binary_search(targets.begin(), targets.end(), it->second)) chosen = it->second;
        }
      }
      // Drawn even when masked so that masks never shift the random stream.
      const int drawn = targets[uniform_index(rng, static_cast<int>(targets.size()))];
      c.edge(node, o) = chosen >= 0 ? chosen : drawn;
    }
  }
  return c;
}

JointPolicy sample_joint_policy(const std::vector<SuccessorTable>& tables, int n_nodes,
                                const Mask* mask, Rng& rng) {
  JointPolicy p;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const ControllerMask* m = mask && i < mask->agents.size() ? &mask->agents[i] : nullptr;
    p.controllers.push_back(sample_valid_controller(tables[i], n_nodes, m, rng));
  }
  return p;
}

std::string validate_controller(const PolicyController& c, const SuccessorTable& table) {
  const int n = c.n_nodes();
  const int R = static_cast<int>(table.roster.size());
  if (n < R) return "fewer nodes than roster entries";
  if (c.alphabet != table.alphabet) return "observation alphabet size mismatch";
  if (c.edges.size() != static_cast<std::size_t>(n) * c.alphabet) return "edge table has the wrong size";
  if (c.initial_node < 0 || c.initial_node >= n) return "initial node out of range";
  for (int node = 0; node < n; ++node) {
    if (node < R && c.labels[node] != table.roster[node]) return "identity node relabelled";
    if (table.position(c.labels[node]) < 0) return "node label is not in the roster";
  }
  for (int node = 0; node < n; ++node) {
    for (int o = 0; o < c.alphabet; ++o) {
      const int t = c.next(node, o);
      if (t < 0 || t >= n) return "edge target out of range";
      if (!table.allows(c.labels[node], o, c.labels[t])) {
        std::ostringstream msg;
        msg << "edge (" << node << ", " << o << ") -> " << t << " is not a valid successor";
        return msg.str();
      }
    }
  }
  return {};
}

std::string validate_joint_policy(const JointPolicy& p, const std::vector<SuccessorTable>& tables) {
  if (p.controllers.size() != tables.size()) return "one controller per agent required";
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (std::string err = validate_controller(p.controllers[i], tables[i]); !err.empty()) {
      return "agent " + std::to_string(i) + ": " + err;
    }
  }
  return {};
}

BigInt controller_space_cardinality(int n_nodes, const SuccessorTable& table) {
  check_nodes(table, n_nodes);
  const int R = static_cast<int>(table.roster.size());
  const int F = n_nodes - R;
  std::vector<int> extra(R, 0);
  BigInt total = 0;
  const BigInt f_fact = factorial(F);

  // Sum over compositions of the F free labels; the multinomial counts the
  // labelings with that composition.
  std::function<void(int, int)> rec = [&](int pos, int left) {
    if (pos == R - 1) {
      extra[pos] = left;
      BigInt term = f_fact;
      for (int q = 0; q < R; ++q) term /= factorial(extra[q]);
      for (int p = 0; p < R; ++p) {
        for (int o = 0; o < table.alphabet; ++o) {
          BigInt s = 0;
          for (int q : table.allowed[p][o]) s += 1 + extra[q];
          term *= ipow(s, 1 + extra[p]);
        }
      }
      total += term;
      return;
    }
    for (int k = 0; k <= left; ++k) {
      extra[pos] = k;
      rec(pos + 1, left - k);
    }
  };
  rec(0, F);
  return total;
}

BigInt controller_space_cardinality(int n_nodes, const std::vector<SuccessorTable>& tables) {
  BigInt total = 1;
  for (const auto& t : tables) total *= controller_space_cardinality(n_nodes, t);
  return total;
}

void enumerate_controllers(const SuccessorTable& table, int n_nodes,
                           const std::function<void(const PolicyController&)>& visit) {
  check_nodes(table, n_nodes);
  const int R = static_cast<int>(table.roster.size());
  PolicyController c;
  c.alphabet = table.alphabet;
  c.labels = table.roster;
  c.labels.resize(n_nodes);
  c.edges.assign(static_cast<std::size_t>(n_nodes) * c.alphabet, 0);
  const int slots = n_nodes * c.alphabet;

  std::vector<std::vector<int>> targets(slots);
  std::function<void(int)> edges_rec = [&](int slot) {
    if (slot == slots) {
      visit(c);
      return;
    }
    for (int t : targets[slot]) {
      c.edges[slot] = t;
      edges_rec(slot + 1);
    }
  };
  std::function<void(int)> labels_rec = [&](int node) {
    if (node == n_nodes) {
      for (int s = 0; s < slots; ++s) {
        targets[s] = valid_targets(table, c.labels, c.labels[s / c.alphabet], s % c.alphabet);
      }
      edges_rec(0);
      return;
    }
    for (int tma : table.roster) {
      c.labels[node] = tma;
      labels_rec(node + 1);
    }
  };
  labels_rec(R);
}

void enumerate_joint_policies(const std::vector<SuccessorTable>& tables, int n_nodes,
                              const std::function<void(const JointPolicy&)>& visit) {
  std::vector<std::vector<PolicyController>> spaces;
  for (const auto& t : tables) {
    spaces.emplace_back();
    enumerate_controllers(t, n_nodes, [&](const PolicyController& c) { spaces.back().push_back(c); });
  }
  JointPolicy p;
  p.controllers.resize(tables.size());
  std::function<void(std::size_t)> rec = [&](std::size_t agent) {
    if (agent == tables.size()) {
      visit(p);
      return;
    }
    for (const auto& c : spaces[agent]) {
      p.controllers[agent] = c;
      rec(agent + 1);
    }
  };
  rec(0);
}

nlohmann::json to_json(const JointPolicy& p, const std::vector<std::string>& tma_names) {
  nlohmann::json controllers = nlohmann::json::array();
  for (const auto& c : p.controllers) {
    nlohmann::json edges = nlohmann::json::array();
    for (int node = 0; node < c.n_nodes(); ++node) {
      std::vector<int> row(c.edges.begin() + static_cast<std::ptrdiff_t>(node) * c.alphabet,
                           c.edges.begin() + static_cast<std::ptrdiff_t>(node + 1) * c.alphabet);
      edges.push_back(row);
    }
    nlohmann::json jc{{"initial_node", c.initial_node},
                      {"alphabet", c.alphabet},
                      {"labels", c.labels},
                      {"edges", std::move(edges)}};
    if (!tma_names.empty()) {
      std::vector<std::string> names;
      for (int l : c.labels) {
        names.push_back(l >= 0 && l < static_cast<int>(tma_names.size()) ? tma_names[l] : "?");
      }
      jc["names"] = names;
    }
    controllers.push_back(std::move(jc));
  }
  return nlohmann::json{{"format", kPolicyFormat}, {"version", kPolicyVersion}, {"controllers", controllers}};
}

JointPolicy joint_policy_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kPolicyFormat) throw ConfigError("not a posmdp.policy document");
  if (j.value("version", 0) != kPolicyVersion) throw ConfigError("unsupported posmdp.policy version");
  try {
    JointPolicy p;
    for (const auto& jc : j.at("controllers")) {
      PolicyController c;
      c.initial_node = jc.at("initial_node").get<int>();
      c.alphabet = jc.at("alphabet").get<int>();
      c.labels = jc.at("labels").get<std::vector<int>>();
      const auto& rows = jc.at("edges");
      if (rows.size() != c.labels.size()) throw ConfigError("policy edge table needs one row per node");
      for (const auto& row : rows) {
        const auto r = row.get<std::vector<int>>();
        if (static_cast<int>(r.size()) != c.alphabet) throw ConfigError("policy edge row has the wrong length");
        c.edges.insert(c.edges.end(), r.begin(), r.end());
      }
      p.controllers.push_back(std::move(c));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad posmdp.policy document: ") + e.what());
  }
}

}  // namespace posmdp::policy

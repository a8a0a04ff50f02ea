#pragma once

#include <stdexcept>
#include <string>

namespace posmdp {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad dimensions, unparsable files, inconsistent geometry.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The Riccati fixed-point iteration (or value iteration) did not settle.
class NonConvergent : public Error {
 public:
  using Error::Error;
};

/// No gain in the requested family stabilizes (A, G).
class Unstabilizable : public Error {
 public:
  using Error::Error;
};

/// A constructed TMA reaches its goal from the start node with probability 0.
class GoalUnreachable : public Error {
 public:
  using Error::Error;
};

/// A transient graph node has no outgoing LMA.
class NoOutgoingEdge : public Error {
 public:
  using Error::Error;
};

/// (I - P_transient) is singular: some transient class never absorbs.
class SingularChain : public Error {
 public:
  using Error::Error;
};

/// A TMA was started outside its initiation set.
class InitiationViolated : public Error {
 public:
  using Error::Error;
};

/// Some (TMA, observation) pair admits no valid successor TMA.
class NoValidSuccessor : public Error {
 public:
  using Error::Error;
};

}  // namespace posmdp

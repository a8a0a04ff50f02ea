#pragma once

// Data descriptions of step rewards and constraint sets, so that models can be
// built from configuration files instead of hand-written lambdas.

#include <optional>
#include <vector>

#include "posmdp/belief.hpp"

namespace posmdp {

/// Axis-aligned box over the position coordinates of a state.
struct Box {
  Vector lo;
  Vector hi;

  bool contains(const Vector& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct ConstraintSpec {
  std::vector<int> position_dims;  // state indices that form the position
  std::optional<Box> bounds;       // leaving the bounds is a violation
  std::vector<Box> obstacles;      // entering any obstacle is a violation
  bool everywhere = false;         // every state violates

  Vector position(const Vector& state) const;
  bool violates(const Vector& state) const;
  bool violates_position(const Vector& pos) const;
  belief::ConstraintSet predicate() const;
};

/// r(x, u) = constant - control_weight * |u|^2
struct StepRewardSpec {
  double constant = 0.0;
  double control_weight = 0.0;

  belief::StepReward function() const;
};

struct ModelSpec {
  Matrix A, G, C, Q, R_obs;
  StepRewardSpec step_reward;
  ConstraintSpec constraints;

  belief::LinearGaussianModel build() const;
};

/// 1-D random walk x' = a x + g u with noisy direct observation.
ModelSpec scalar_model_spec(double a, double g, double c, double q, double r);

/// Planar single integrator p' = p + dt u observed directly.
ModelSpec single_integrator_2d(double dt, double process_var, double obs_var);

/// Planar double integrator (x, y, vx, vy) with full-state observation.
ModelSpec double_integrator_2d(double dt, double process_var, double obs_var);

}  // namespace posmdp

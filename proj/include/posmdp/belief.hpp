#pragma once

// Gaussian belief propagation and linear-feedback local macro-actions (LMAs).
//
// An LMA is a stationary Kalman filter paired with the separated controller
// u = -L (mean - target). Its attractor is the belief (target, P_stationary),
// and an epsilon-ball around an attractor is a milestone.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "posmdp/rng.hpp"

namespace posmdp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace posmdp

namespace posmdp::belief {

/// Per-step reward r(x, u); negative values are costs.
using StepReward = std::function<double(const Vector& state, const Vector& control)>;
/// True when the state violates a constraint (obstacle, forbidden airspace).
using ConstraintSet = std::function<bool(const Vector& state)>;

/// Locally linear-Gaussian dynamics x' = A x + G u + w, z = C x + v.
class LinearGaussianModel {
 public:
  LinearGaussianModel(Matrix A, Matrix G, Matrix C, Matrix Q, Matrix R_obs,
                      StepReward step_reward = {}, ConstraintSet constraint_set = {});

  int state_dim() const { return static_cast<int>(A_.rows()); }
  int control_dim() const { return static_cast<int>(G_.cols()); }
  int obs_dim() const { return static_cast<int>(C_.rows()); }

  const Matrix& A() const { return A_; }
  const Matrix& G() const { return G_; }
  const Matrix& C() const { return C_; }
  const Matrix& Q() const { return Q_; }
  const Matrix& R_obs() const { return R_; }

  double step_reward(const Vector& x, const Vector& u) const {
    return step_reward_ ? step_reward_(x, u) : 0.0;
  }
  bool violates(const Vector& x) const { return constraint_set_ ? constraint_set_(x) : false; }

  Vector sample_process_noise(Rng& rng) const;
  Vector sample_observation_noise(Rng& rng) const;

 private:
  Matrix A_, G_, C_, Q_, R_;
  Matrix Q_sqrt_, R_sqrt_;
  StepReward step_reward_;
  ConstraintSet constraint_set_;
};

struct GaussianBelief {
  Vector mean;
  Matrix cov;
};

/// Weighted belief-space distance: w_mean * |mean diff|_2 + w_cov * |cov diff|_F.
struct BeliefNorm {
  double mean_weight = 1.0;
  double cov_weight = 0.1;

  double distance(const GaussianBelief& a, const GaussianBelief& b) const;
};

/// Milestone B = {b : |b - center| <= epsilon}. Id 0 is the failure node B0,
/// which has no center.
struct Milestone {
  int id = 0;
  GaussianBelief center;
  double epsilon = 0.0;

  bool is_failure() const { return id == 0; }
  bool contains(const GaussianBelief& b, const BeliefNorm& norm) const {
    return !is_failure() && norm.distance(b, center) <= epsilon;
  }
};

struct LmaParams {
  Matrix gain;    // L
  Vector target;  // v
};

struct Lma {
  LmaParams params;
  Matrix kalman_gain;       // steady-state filter gain
  GaussianBelief attractor; // (v, P_stationary)

  Vector control(const Vector& mean) const { return -params.gain * (mean - params.target); }
};

struct LqrGain {
  Matrix state_weight;
  Matrix control_weight;
};
struct FixedGain {
  Matrix gain;
};
using GainSpec = std::variant<LqrGain, FixedGain>;

struct RiccatiOptions {
  double tol = 1e-9;
  int max_iter = 100000;
};

struct SimState {
  Vector truth;
  GaussianBelief belief;
  long elapsed = 0;
  double accrued_reward = 0.0;
};

enum class Outcome { Landed, Violated, Timeout };

struct TerminationRecord {
  Outcome outcome = Outcome::Timeout;
  int landed_region_id = 0;  // 0 for violations and timeouts
  long elapsed_steps = 0;
  double accrued_reward = 0.0;
  SimState final_state;

  bool operator==(const TerminationRecord& o) const;
};

/// One step of the posterior-covariance Riccati map P+ -> P+'.
Matrix riccati_step(const LinearGaussianModel& model, const Matrix& P);

/// Fixed point P of the filtering Riccati recursion (posterior covariance).
/// Throws NonConvergent when max_iter is exhausted or the iterate blows up.
Matrix stationary_covariance(const LinearGaussianModel& model, const RiccatiOptions& opts = {});

/// Steady-state Kalman gain for a covariance fixed point.
Matrix steady_state_kalman_gain(const LinearGaussianModel& model, const Matrix& P_stationary);

/// Discrete-time LQR gain by iterating the control Riccati equation.
Matrix lqr_gain(const Matrix& A, const Matrix& G, const Matrix& state_weight,
                const Matrix& control_weight, const RiccatiOptions& opts = {});

double spectral_radius(const Matrix& M);

/// Builds an LMA steering toward target. Throws Unstabilizable if the
/// closed loop A - G L has spectral radius >= 1.
Lma design_lma(const LinearGaussianModel& model, const Vector& target, const GainSpec& gain_spec);

/// Same as design_lma but reuses an already computed gain and covariance.
Lma make_lma(const LinearGaussianModel& model, const Vector& target, const Matrix& gain,
             const Matrix& P_stationary);

GaussianBelief kalman_predict(const LinearGaussianModel& model, const GaussianBelief& b,
                              const Vector& u);
GaussianBelief kalman_correct(const LinearGaussianModel& model, const GaussianBelief& prior,
                              const Vector& z);

/// Applies the LMA control, advances the truth with process noise,
/// samples an observation and runs one Kalman predict/correct cycle.
SimState lma_step(const Lma& lma, const SimState& sim, const LinearGaussianModel& model, Rng& rng);

/// Index into regions of the closest region containing b, or -1.
/// Ties go to the lower milestone id.
int find_landing(std::span<const Milestone> regions, const GaussianBelief& b,
                 const BeliefNorm& norm);

/// Runs lma_step until the belief enters a stop region, the truth violates
/// the model's constraint set (region 0), or max_steps elapse (Timeout).
TerminationRecord run_lma(const Lma& lma, const SimState& start,
                          std::span<const Milestone> stop_regions,
                          const LinearGaussianModel& model, long max_steps, Rng& rng,
                          const BeliefNorm& norm = {});

/// Draws a truth state from a belief.
Vector sample_from_belief(const GaussianBelief& b, Rng& rng);

/// Symmetric square root (eigen-decomposition; negative eigenvalues clamp to 0).
Matrix psd_sqrt(const Matrix& M);

double min_eigenvalue(const Matrix& M);

}  // namespace posmdp::belief

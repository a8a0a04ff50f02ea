#include "posmdp/belief.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

#include "posmdp/error.hpp"

namespace posmdp::belief {

namespace {

bool is_symmetric(const Matrix& M, double tol = 1e-9) {
  return M.rows() == M.cols() && (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + M.cwiseAbs().maxCoeff());
}

Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }

Vector standard_normal(int n, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

}  // namespace

Matrix psd_sqrt(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double min_eigenvalue(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

LinearGaussianModel::LinearGaussianModel(Matrix A, Matrix G, Matrix C, Matrix Q, Matrix R_obs,
                                         StepReward step_reward, ConstraintSet constraint_set)
    : A_(std::move(A)),
      G_(std::move(G)),
      C_(std::move(C)),
      Q_(std::move(Q)),
      R_(std::move(R_obs)),
      step_reward_(std::move(step_reward)),
      constraint_set_(std::move(constraint_set)) {
  const auto n = A_.rows();
  if (n == 0 || A_.cols() != n) throw ConfigError("model: A must be square and non-empty");
  if (G_.rows() != n) throw ConfigError("model: G row count must equal state dimension");
  if (C_.cols() != n) throw ConfigError("model: C column count must equal state dimension");
  if (Q_.rows() != n || Q_.cols() != n) throw ConfigError("model: Q must be state_dim square");
  if (R_.rows() != C_.rows() || R_.cols() != C_.rows())
    throw ConfigError("model: R_obs must be obs_dim square");
  if (!is_symmetric(Q_) || min_eigenvalue(Q_) < -1e-12) throw ConfigError("model: Q must be symmetric PSD");
  if (!is_symmetric(R_) || min_eigenvalue(R_) <= 0.0) throw ConfigError("model: R_obs must be symmetric PD");
  Q_sqrt_ = psd_sqrt(Q_);
  R_sqrt_ = psd_sqrt(R_);
}

Vector LinearGaussianModel::sample_process_noise(Rng& rng) const {
  return Q_sqrt_ * standard_normal(state_dim(), rng);
}

Vector LinearGaussianModel::sample_observation_noise(Rng& rng) const {
  return R_sqrt_ * standard_normal(obs_dim(), rng);
}

double BeliefNorm::distance(const GaussianBelief& a, const GaussianBelief& b) const {
  double d = mean_weight * (a.mean - b.mean).norm();
  if (cov_weight != 0.0) d += cov_weight * (a.cov - b.cov).norm();
  return d;
}

bool TerminationRecord::operator==(const TerminationRecord& o) const {
  return outcome == o.outcome && landed_region_id == o.landed_region_id &&
         elapsed_steps == o.elapsed_steps && accrued_reward == o.accrued_reward &&
         final_state.truth == o.final_state.truth && final_state.belief.mean == o.final_state.belief.mean &&
         final_state.belief.cov == o.final_state.belief.cov;
}

Matrix riccati_step(const LinearGaussianModel& model, const Matrix& P) {
  const Matrix& A = model.A();
  const Matrix& C = model.C();
  Matrix prior = A * P * A.transpose() + model.Q();
  Matrix S = C * prior * C.transpose() + model.R_obs();
  Matrix K = S.ldlt().solve(C * prior).transpose();
  Matrix IKC = Matrix::Identity(P.rows(), P.cols()) - K * C;
  return symmetrize(IKC * prior * IKC.transpose() + K * model.R_obs() * K.transpose());
}

Matrix stationary_covariance(const LinearGaussianModel& model, const RiccatiOptions& opts) {
  Matrix P = model.Q();
  for (int it = 0; it < opts.max_iter; ++it) {
    Matrix next = riccati_step(model, P);
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e12) {
      throw NonConvergent("stationary_covariance: Riccati iterate diverged (unobservable local model?)");
    }
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= opts.tol) return P;
  }
  std::ostringstream msg;
  msg << "stationary_covariance: no convergence after " << opts.max_iter << " iterations";
  throw NonConvergent(msg.str());
}

Matrix steady_state_kalman_gain(const LinearGaussianModel& model, const Matrix& P_stationary) {
  const Matrix& C = model.C();
  Matrix prior = model.A() * P_stationary * model.A().transpose() + model.Q();
  Matrix S = C * prior * C.transpose() + model.R_obs();
  return S.ldlt().solve(C * prior).transpose();
}

Matrix lqr_gain(const Matrix& A, const Matrix& G, const Matrix& state_weight,
                const Matrix& control_weight, const RiccatiOptions& opts) {
  if (state_weight.rows() != A.rows() || state_weight.cols() != A.rows() ||
      control_weight.rows() != G.cols() || control_weight.cols() != G.cols()) {
    throw ConfigError("lqr_gain: weight dimensions do not match the model");
  }
  Matrix S = state_weight;
  for (int it = 0; it < opts.max_iter; ++it) {
    Matrix GtS = G.transpose() * S;
    Matrix H = control_weight + GtS * G;
    Matrix next = symmetrize(A.transpose() * S * A -
                             A.transpose() * S * G * H.ldlt().solve(GtS * A) + state_weight);
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e12) {
      throw Unstabilizable("lqr_gain: control Riccati iterate diverged");
    }
    const double change = (next - S).cwiseAbs().maxCoeff();
    S = std::move(next);
    if (change <= opts.tol) {
      Matrix GtS2 = G.transpose() * S;
      return (control_weight + GtS2 * G).ldlt().solve(GtS2 * A);
    }
  }
  throw Unstabilizable("lqr_gain: control Riccati iteration did not converge");
}

double spectral_radius(const Matrix& M) {
  Eigen::EigenSolver<Matrix> es(M, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Lma make_lma(const LinearGaussianModel& model, const Vector& target, const Matrix& gain,
             const Matrix& P_stationary) {
  if (target.size() != model.state_dim()) throw ConfigError("make_lma: target dimension mismatch");
  Lma lma;
  lma.params = LmaParams{gain, target};
  lma.kalman_gain = steady_state_kalman_gain(model, P_stationary);
  lma.attractor = GaussianBelief{target, P_stationary};
  return lma;
}

Lma design_lma(const LinearGaussianModel& model, const Vector& target, const GainSpec& gain_spec) {
  Matrix L = std::visit(
      [&](const auto& spec) -> Matrix {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, LqrGain>) {
          return lqr_gain(model.A(), model.G(), spec.state_weight, spec.control_weight);
        } else {
          return spec.gain;
        }
      },
      gain_spec);
  if (L.rows() != model.control_dim() || L.cols() != model.state_dim()) {
    throw ConfigError("design_lma: gain must be control_dim x state_dim");
  }
  const double rho = spectral_radius(model.A() - model.G() * L);
  if (!(rho < 1.0)) {
    std::ostringstream msg;
    msg << "design_lma: closed loop spectral radius " << rho << " >= 1";
    throw Unstabilizable(msg.str());
  }
  return make_lma(model, target, L, stationary_covariance(model));
}

GaussianBelief kalman_predict(const LinearGaussianModel& model, const GaussianBelief& b,
                              const Vector& u) {
  return GaussianBelief{model.A() * b.mean + model.G() * u,
                        symmetrize(model.A() * b.cov * model.A().transpose() + model.Q())};
}

GaussianBelief kalman_correct(const LinearGaussianModel& model, const GaussianBelief& prior,
                              const Vector& z) {
  const Matrix& C = model.C();
  Matrix S = C * prior.cov * C.transpose() + model.R_obs();
  Matrix K = S.ldlt().solve(C * prior.cov).transpose();
  Matrix IKC = Matrix::Identity(prior.cov.rows(), prior.cov.cols()) - K * C;
  GaussianBelief post;
  post.mean = prior.mean + K * (z - C * prior.mean);
  // Joseph form keeps the covariance PSD under round-off.
  post.cov = symmetrize(IKC * prior.cov * IKC.transpose() + K * model.R_obs() * K.transpose());
  return post;
}

SimState lma_step(const Lma& lma, const SimState& sim, const LinearGaussianModel& model, Rng& rng) {
  SimState next;
  const Vector u = lma.control(sim.belief.mean);
  next.truth = model.A() * sim.truth + model.G() * u + model.sample_process_noise(rng);
  const Vector z = model.C() * next.truth + model.sample_observation_noise(rng);
  next.belief = kalman_correct(model, kalman_predict(model, sim.belief, u), z);
  next.elapsed = sim.elapsed + 1;
  next.accrued_reward = sim.accrued_reward + model.step_reward(sim.truth, u);
  return next;
}

int find_landing(std::span<const Milestone> regions, const GaussianBelief& b,
                 const BeliefNorm& norm) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(regions.size()); ++i) {
    const Milestone& m = regions[i];
    if (m.is_failure()) continue;
    const double d = norm.distance(b, m.center);
    if (d > m.epsilon) continue;
    if (d < best_d || (d == best_d && m.id < regions[best].id)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

TerminationRecord run_lma(const Lma& lma, const SimState& start,
                          std::span<const Milestone> stop_regions,
                          const LinearGaussianModel& model, long max_steps, Rng& rng,
                          const BeliefNorm& norm) {
  if (stop_regions.empty()) throw ConfigError("run_lma: stop_regions must be non-empty");
  if (max_steps <= 0) throw ConfigError("run_lma: max_steps must be positive");

  TerminationRecord rec;
  SimState sim = start;
  const long t0 = start.elapsed;
  const double r0 = start.accrued_reward;
  auto finish = [&](Outcome outcome, int region) {
    rec.outcome = outcome;
    rec.landed_region_id = region;
    rec.elapsed_steps = sim.elapsed - t0;
    rec.accrued_reward = sim.accrued_reward - r0;
    rec.final_state = sim;
    return rec;
  };

  if (int hit = find_landing(stop_regions, sim.belief, norm); hit >= 0) {
    return finish(Outcome::Landed, stop_regions[hit].id);
  }
  for (long step = 0; step < max_steps; ++step) {
    sim = lma_step(lma, sim, model, rng);
    if (model.violates(sim.truth)) return finish(Outcome::Violated, 0);
    if (int hit = find_landing(stop_regions, sim.belief, norm); hit >= 0) {
      return finish(Outcome::Landed, stop_regions[hit].id);
    }
  }
  return finish(Outcome::Timeout, 0);
}

Vector sample_from_belief(const GaussianBelief& b, Rng& rng) {
  return b.mean + psd_sqrt(b.cov) * standard_normal(static_cast<int>(b.mean.size()), rng);
}

}  // namespace posmdp::belief

#pragma once

#include <vector>

#include <Eigen/Dense>

#include "diffinfo/gaussian_model.hpp"
#include "diffinfo/rng.hpp"

namespace diffinfo {

struct KernelParams {
  double mu;      // mean coefficient, sqrt(alpha(s)) for VP
  double sigma2;  // kernel variance, 1 - alpha(s) for VP
};

/// Variance-preserving forward process with a linear rate
/// beta(s) = beta_min + (beta_max - beta_min) s / T, so
/// alpha(s) = exp(-beta_min s - (beta_max - beta_min) s^2 / (2T)).
/// The kernel coefficients satisfy mu(s)^2 + Sigma(s) = 1 for every s.
struct DiffusionSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double horizon = 1.0;  // T
  int steps = 1000;
  double eps_time = 1e-3;  // lower integration cutoff, as a fraction of T

  double beta(double s) const { return beta_min + (beta_max - beta_min) * s / horizon; }
  double alpha(double s) const;
  double sigma2(double s) const { return beta(s); }  // sigma(s)^2 = beta(s)
  double s_cutoff() const { return eps_time * horizon; }

  /// Uniform integration grid of `steps` points on [s_cutoff, T]. Every
  /// quadrature and reverse-time integration in the library runs on it; the
  /// cutoff excludes the 1/Sigma(s) singularity at s = 0.
  std::vector<double> grid() const;
};

DiffusionSchedule vp_schedule(double beta_min, double beta_max, double horizon, int steps,
                              double eps_time);
inline DiffusionSchedule default_vp_schedule() { return vp_schedule(0.1, 20.0, 1.0, 1000, 1e-3); }

KernelParams kernel_params(const DiffusionSchedule& sched, double s);

Eigen::VectorXd forward_jump_sample(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                    double s, rng::Stream& stream);
/// One jump per column, sharing the time s.
Eigen::MatrixXd forward_jump_batch(const DiffusionSchedule& sched, const Eigen::MatrixXd& x,
                                   double s, rng::Stream& stream);

/// alpha * cov + (1 - alpha) I: the covariance of a VP-diffused Gaussian.
Eigen::MatrixXd diffused_cov(const Eigen::MatrixXd& cov, double alpha);

// Analytic scores of the diffused joint-Gaussian model. These one-shot
// versions factorize on every call; score_field.hpp has the cached batched
// evaluators used by samplers and estimators.
Eigen::VectorXd diffused_conditional_score(const JointGaussianSpec& spec,
                                           const DiffusionSchedule& sched,
                                           const Eigen::VectorXd& x_t, double s,
                                           const Eigen::VectorXd& y);
Eigen::VectorXd diffused_marginal_score(const JointGaussianSpec& spec,
                                        const DiffusionSchedule& sched,
                                        const Eigen::VectorXd& x_t, double s);
Eigen::VectorXd diffused_joint_score(const JointGaussianSpec& spec,
                                     const DiffusionSchedule& sched, const Eigen::VectorXd& r_t,
                                     double s);

/// E[x | x_s] recovered from the marginal score via the Miyasawa relation:
/// (x_s + Sigma(s) * score) / mu(s).
Eigen::VectorXd denoised_mean_gaussian(const JointGaussianSpec& spec,
                                       const DiffusionSchedule& sched, const Eigen::VectorXd& x_t,
                                       double s);

// Quasi-invariant state of the VP process: the standard normal, for all s.
double quasi_invariant_logpdf(const Eigen::VectorXd& x);
Eigen::VectorXd quasi_invariant_score(const Eigen::VectorXd& x);

}  // namespace diffinfo

#include "diffinfo/diffusion.hpp"

#include <cmath>

#include "diffinfo/common.hpp"

namespace diffinfo {

double DiffusionSchedule::alpha(double s) const {
  return std::exp(-beta_min * s - (beta_max - beta_min) * s * s / (2.0 * horizon));
}

std::vector<double> DiffusionSchedule::grid() const {
  std::vector<double> g(static_cast<size_t>(steps));
  const double lo = s_cutoff();
  const double h = (horizon - lo) / double(steps - 1);
  for (int i = 0; i < steps; ++i) g[size_t(i)] = lo + h * i;
  g.back() = horizon;
  return g;
}

DiffusionSchedule vp_schedule(double beta_min, double beta_max, double horizon, int steps,
                              double eps_time) {
  require(beta_min > 0.0 && beta_min <= beta_max, "vp_schedule: need 0 < beta_min <= beta_max");
  require(horizon > 0.0, "vp_schedule: horizon must be > 0");
  require(steps >= 2, "vp_schedule: steps must be >= 2");
  require(eps_time > 0.0 && eps_time < 1.0, "vp_schedule: eps_time must be in (0, 1)");
  DiffusionSchedule sched;
  sched.beta_min = beta_min;
  sched.beta_max = beta_max;
  sched.horizon = horizon;
  sched.steps = steps;
  sched.eps_time = eps_time;
  return sched;
}

KernelParams kernel_params(const DiffusionSchedule& sched, double s) {
  require(s >= 0.0 && s <= sched.horizon, "kernel_params: s outside [0, T]");
  const double a = sched.alpha(s);
  return {std::sqrt(a), 1.0 - a};
}

Eigen::VectorXd forward_jump_sample(const DiffusionSchedule& sched, const Eigen::VectorXd& x,
                                    double s, rng::Stream& stream) {
  const KernelParams k = kernel_params(sched, s);
  if (k.sigma2 == 0.0) return x;
  return k.mu * x + std::sqrt(k.sigma2) * stream.normal_vector(x.size());
}

Eigen::MatrixXd forward_jump_batch(const DiffusionSchedule& sched, const Eigen::MatrixXd& x,
                                   double s, rng::Stream& stream) {
  const KernelParams k = kernel_params(sched, s);
  if (k.sigma2 == 0.0) return x;
  return k.mu * x + std::sqrt(k.sigma2) * stream.normal_matrix(x.rows(), x.cols());
}

Eigen::MatrixXd diffused_cov(const Eigen::MatrixXd& cov, double alpha) {
  Eigen::MatrixXd out = alpha * cov;
  out.diagonal().array() += 1.0 - alpha;
  return out;
}

Eigen::VectorXd diffused_conditional_score(const JointGaussianSpec& spec,
                                           const DiffusionSchedule& sched,
                                           const Eigen::VectorXd& x_t, double s,
                                           const Eigen::VectorXd& y) {
  require(x_t.size() == spec.dim_x, "diffused_conditional_score: x has wrong length");
  const GaussianDist cond = conditional_x_given_y(spec, y);
  const double a = sched.alpha(s);
  const auto llt = spd_cholesky(diffused_cov(cond.cov, a), "diffused_conditional_score: Sigma_s");
  return -llt.solve(x_t - std::sqrt(a) * cond.mean);
}

Eigen::VectorXd diffused_marginal_score(const JointGaussianSpec& spec,
                                        const DiffusionSchedule& sched,
                                        const Eigen::VectorXd& x_t, double s) {
  require(x_t.size() == spec.dim_x, "diffused_marginal_score: x has wrong length");
  const auto llt =
      spd_cholesky(diffused_cov(spec.cov_x, sched.alpha(s)), "diffused_marginal_score: Sigma_s");
  return -llt.solve(x_t);
}

Eigen::VectorXd diffused_joint_score(const JointGaussianSpec& spec,
                                     const DiffusionSchedule& sched, const Eigen::VectorXd& r_t,
                                     double s) {
  require(r_t.size() == spec.dim_x + spec.dim_y, "diffused_joint_score: r has wrong length");
  const auto llt = spd_cholesky(diffused_cov(joint_covariance(spec), sched.alpha(s)),
                                "diffused_joint_score: Sigma_s");
  return -llt.solve(r_t);
}

Eigen::VectorXd denoised_mean_gaussian(const JointGaussianSpec& spec,
                                       const DiffusionSchedule& sched, const Eigen::VectorXd& x_t,
                                       double s) {
  require(s >= 0.0 && s < sched.horizon, "denoised_mean_gaussian: s outside [0, T)");
  const KernelParams k = kernel_params(sched, s);
  if (k.mu < 1e-300) throw NumericalError("denoised_mean_gaussian: mu(s) underflows");
  return (x_t + k.sigma2 * diffused_marginal_score(spec, sched, x_t, s)) / k.mu;
}

double quasi_invariant_logpdf(const Eigen::VectorXd& x) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  return -0.5 * (double(x.size()) * kLog2Pi + x.squaredNorm());
}

Eigen::VectorXd quasi_invariant_score(const Eigen::VectorXd& x) { return -x; }

}  // namespace diffinfo

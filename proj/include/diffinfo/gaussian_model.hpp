#pragma once

#include <cstdint>
#include <utility>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffinfo/rng.hpp"

namespace diffinfo {

/// A Gaussian in mean/covariance form.
struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return int(mean.size()); }
};

/// The linear joint-Gaussian data model
///
///   X ~ N(0, Sigma_X),   Y = A X + eps,   eps ~ N(0, sigma_eps^2 I),
///
/// with Sigma_X = H H^T + delta I. Every distribution, entropy and mutual
/// information of this model is available in closed form, which makes it the
/// exact oracle against which all estimators in the library are validated.
///
/// A and H are drawn entrywise from N(0, 1) (H scaled by 1/sqrt(dim_x)),
/// row-major from the seeded stream, so a spec rebuilds bit-exactly from
/// (dims, noise_std, jitter, seed).
struct JointGaussianSpec {
  int dim_x = 1;
  int dim_y = 1;
  Eigen::MatrixXd mixing;  // A, dim_y x dim_x
  Eigen::MatrixXd cov_x;   // Sigma_X, symmetric positive definite
  double noise_std = 1.0;  // sigma_eps, isotropic
  double jitter = 1e-6;    // delta
  std::uint64_t seed = 0;

  Eigen::MatrixXd cross_cov() const { return cov_x * mixing.transpose(); }
  Eigen::MatrixXd cov_y() const;
  Eigen::MatrixXd cov_eps() const;
};

JointGaussianSpec build_joint_spec(int dim_x, int dim_y, double noise_std, double jitter,
                                   std::uint64_t seed);

/// Block covariance of R = (X, Y): [[Sigma_X, Sigma_X A^T], [A Sigma_X, Sigma_Y]].
Eigen::MatrixXd joint_covariance(const JointGaussianSpec& spec);

GaussianDist conditional_x_given_y(const JointGaussianSpec& spec, const Eigen::VectorXd& y);

/// I(X;Y) = 1/2 log(det Sigma_Y / det Sigma_eps), in nats.
double analytic_mi(const JointGaussianSpec& spec);

/// 1-D closed form: 1/2 log(1 + a^2 sigma_x^2 / sigma_eps^2).
double mi_1d(double a, double sigma_x, double sigma_eps);

/// n pairs drawn as x ~ N(0, Sigma_X), y = A x + eps. Column i of the two
/// matrices holds the i-th pair.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_pairs(const JointGaussianSpec& spec, int n,
                                                         std::uint64_t seed);
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_pairs(const JointGaussianSpec& spec, int n,
                                                         rng::Stream& stream);

double gaussian_kl(const GaussianDist& p, const GaussianDist& q);

/// TC of a Gaussian: 1/2 (sum_k log cov_kk - log det cov). Returns +infinity
/// when the correlation part of cov is singular below the overflow threshold.
double total_correlation_gaussian(const Eigen::MatrixXd& cov);

/// Cholesky of an SPD matrix; failure is the SPD-violation signal and raises
/// NumericalError tagged with `what`.
Eigen::LLT<Eigen::MatrixXd> spd_cholesky(const Eigen::MatrixXd& m, const char* what);
double spd_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt);

nlohmann::json spec_to_json(const JointGaussianSpec& spec, bool embed_matrices = false);
JointGaussianSpec spec_from_json(const nlohmann::json& j);

}  // namespace diffinfo

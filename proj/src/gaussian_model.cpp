#include "diffinfo/gaussian_model.hpp"

#include <cmath>
#include <limits>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

// Entries drawn row-major so the spec is reproducible across platforms.
Eigen::MatrixXd normal_matrix_row_major(rng::Stream& stream, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = stream.normal();
  return m;
}

}  // namespace

Eigen::MatrixXd JointGaussianSpec::cov_y() const {
  return mixing * cov_x * mixing.transpose() + cov_eps();
}

Eigen::MatrixXd JointGaussianSpec::cov_eps() const {
  return noise_std * noise_std * Eigen::MatrixXd::Identity(dim_y, dim_y);
}

Eigen::LLT<Eigen::MatrixXd> spd_cholesky(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

double spd_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

JointGaussianSpec build_joint_spec(int dim_x, int dim_y, double noise_std, double jitter,
                                   std::uint64_t seed) {
  require(dim_x >= 1 && dim_y >= 1, "build_joint_spec: dims must be >= 1");
  require(noise_std > 0.0, "build_joint_spec: noise_std must be > 0");
  require(jitter > 0.0, "build_joint_spec: jitter must be > 0");

  JointGaussianSpec spec;
  spec.dim_x = dim_x;
  spec.dim_y = dim_y;
  spec.noise_std = noise_std;
  spec.jitter = jitter;
  spec.seed = seed;

  rng::Stream mixing_stream = rng::named_stream(seed, "mixing");
  spec.mixing = normal_matrix_row_major(mixing_stream, dim_y, dim_x);

  rng::Stream factor_stream = rng::named_stream(seed, "cov-factor");
  const Eigen::MatrixXd h =
      normal_matrix_row_major(factor_stream, dim_x, dim_x) / std::sqrt(double(dim_x));
  spec.cov_x = h * h.transpose() + jitter * Eigen::MatrixXd::Identity(dim_x, dim_x);
  return spec;
}

Eigen::MatrixXd joint_covariance(const JointGaussianSpec& spec) {
  const int dx = spec.dim_x, dy = spec.dim_y;
  Eigen::MatrixXd cov(dx + dy, dx + dy);
  const Eigen::MatrixXd cross = spec.cross_cov();
  cov.topLeftCorner(dx, dx) = spec.cov_x;
  cov.topRightCorner(dx, dy) = cross;
  cov.bottomLeftCorner(dy, dx) = cross.transpose();
  cov.bottomRightCorner(dy, dy) = spec.cov_y();
  return cov;
}

GaussianDist conditional_x_given_y(const JointGaussianSpec& spec, const Eigen::VectorXd& y) {
  require(y.size() == spec.dim_y, "conditional_x_given_y: y has wrong length");
  const Eigen::MatrixXd cross = spec.cross_cov();
  const auto llt_y = spd_cholesky(spec.cov_y(), "conditional_x_given_y: Sigma_Y");
  GaussianDist dist;
  dist.mean = cross * llt_y.solve(y);
  dist.cov = spec.cov_x - cross * llt_y.solve(cross.transpose());
  return dist;
}

double analytic_mi(const JointGaussianSpec& spec) {
  require(spec.noise_std > 0.0, "analytic_mi: singular Sigma_eps");
  const auto llt_y = spd_cholesky(spec.cov_y(), "analytic_mi: Sigma_Y");
  const double log_det_eps = 2.0 * spec.dim_y * std::log(spec.noise_std);
  return 0.5 * (spd_log_det(llt_y) - log_det_eps);
}

double mi_1d(double a, double sigma_x, double sigma_eps) {
  require(sigma_x > 0.0 && sigma_eps > 0.0, "mi_1d: scales must be > 0");
  const double r = a * sigma_x / sigma_eps;
  return 0.5 * std::log1p(r * r);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_pairs(const JointGaussianSpec& spec, int n,
                                                         rng::Stream& stream) {
  require(n >= 1, "sample_pairs: n must be >= 1");
  const auto llt_x = spd_cholesky(spec.cov_x, "sample_pairs: Sigma_X");
  const Eigen::MatrixXd z = stream.normal_matrix(spec.dim_x, n);
  const Eigen::MatrixXd eps = stream.normal_matrix(spec.dim_y, n);
  Eigen::MatrixXd x = llt_x.matrixL() * z;
  Eigen::MatrixXd y = spec.mixing * x + spec.noise_std * eps;
  return {std::move(x), std::move(y)};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_pairs(const JointGaussianSpec& spec, int n,
                                                         std::uint64_t seed) {
  rng::Stream stream = rng::named_stream(seed, "pairs");
  return sample_pairs(spec, n, stream);
}

double gaussian_kl(const GaussianDist& p, const GaussianDist& q) {
  require(p.dim() == q.dim(), "gaussian_kl: dimension mismatch");
  const int k = p.dim();
  const auto llt_q = spd_cholesky(q.cov, "gaussian_kl: q covariance");
  const double trace_term = llt_q.solve(p.cov).trace();
  const Eigen::VectorXd dm = q.mean - p.mean;
  const double mahal = dm.dot(llt_q.solve(dm));
  const auto llt_p = spd_cholesky(p.cov, "gaussian_kl: p covariance");
  return 0.5 * (trace_term + mahal - k + spd_log_det(llt_q) - spd_log_det(llt_p));
}

double total_correlation_gaussian(const Eigen::MatrixXd& cov) {
  require(cov.rows() == cov.cols(), "total_correlation_gaussian: matrix must be square");
  const double sum_log_diag = cov.diagonal().array().log().sum();

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    // Distinguish a PSD matrix that is singular to working precision (a
    // perfectly correlated Gaussian, TC -> infinity) from genuinely
    // indefinite input.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    const double scale = cov.diagonal().cwiseAbs().maxCoeff();
    if (eig.eigenvalues().minCoeff() < -1e-12 * std::max(scale, 1.0))
      throw std::invalid_argument("total_correlation_gaussian: covariance is not PSD");
    return std::numeric_limits<double>::infinity();
  }

  // log of det(correlation matrix); below the overflow threshold the TC is
  // reported as the infinity sentinel instead of a finite garbage value.
  const double log_det_corr = spd_log_det(llt) - sum_log_diag;
  if (log_det_corr < std::log(1e-300)) return std::numeric_limits<double>::infinity();
  return -0.5 * log_det_corr;
}

nlohmann::json spec_to_json(const JointGaussianSpec& spec, bool embed_matrices) {
  nlohmann::json j;
  j["dim_x"] = spec.dim_x;
  j["dim_y"] = spec.dim_y;
  j["noise_std"] = spec.noise_std;
  j["jitter"] = spec.jitter;
  j["seed"] = spec.seed;
  if (embed_matrices) {
    auto to_rows = [](const Eigen::MatrixXd& m) {
      std::vector<std::vector<double>> rows(m.rows());
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows[i].resize(size_t(m.cols()));
        for (Eigen::Index k = 0; k < m.cols(); ++k) rows[i][size_t(k)] = m(i, k);
      }
      return rows;
    };
    j["mixing"] = to_rows(spec.mixing);
    j["cov_x"] = to_rows(spec.cov_x);
  }
  return j;
}

JointGaussianSpec spec_from_json(const nlohmann::json& j) {
  JointGaussianSpec spec = build_joint_spec(j.at("dim_x").get<int>(), j.at("dim_y").get<int>(),
                                            j.at("noise_std").get<double>(),
                                            j.at("jitter").get<double>(),
                                            j.at("seed").get<std::uint64_t>());
  auto from_rows = [](const nlohmann::json& rows) {
    const int r = int(rows.size());
    const int c = r > 0 ? int(rows.at(0).size()) : 0;
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int k = 0; k < c; ++k) m(i, k) = rows.at(size_t(i)).at(size_t(k)).get<double>();
    return m;
  };
  if (j.contains("mixing")) {
    spec.mixing = from_rows(j.at("mixing"));
    require(spec.mixing.rows() == spec.dim_y && spec.mixing.cols() == spec.dim_x,
            "spec_from_json: mixing has wrong shape");
  }
  if (j.contains("cov_x")) {
    spec.cov_x = from_rows(j.at("cov_x"));
    require(spec.cov_x.rows() == spec.dim_x && spec.cov_x.cols() == spec.dim_x,
            "spec_from_json: cov_x has wrong shape");
    spd_cholesky(spec.cov_x, "spec_from_json: cov_x");
  }
  return spec;
}

}  // namespace diffinfo

#include "diffinfo/estimators.hpp"

#include <cmath>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_n_mc(long n_mc) {
  require(n_mc >= 100, "estimators: n_mc < 100 gives a meaningless standard error");
}

/// Accumulates per-time Monte-Carlo means into a trapezoid quadrature with
/// propagated standard errors.
class QuadratureAccumulator {
 public:
  explicit QuadratureAccumulator(std::vector<double> times)
      : times_(std::move(times)),
        rate_(times_.size(), 0.0),
        se_rate_(times_.size(), 0.0) {}

  void set_time(size_t j, const Eigen::VectorXd& values) {
    const double n = double(values.size());
    const double mean = values.mean();
    rate_[j] = mean;
    if (values.size() > 1) {
      const double ss = (values.array() - mean).square().sum() / (n - 1.0);
      se_rate_[j] = std::sqrt(ss / n);
    }
  }

  EntropyReport finish(ReportMeta meta) const {
    EntropyReport report;
    report.times = times_;
    report.rate = rate_;
    report.cumulative.assign(times_.size(), 0.0);
    report.mc_stderr.assign(times_.size(), 0.0);
    double var = 0.0;
    // Trapezoid weights: each interval contributes h/2 of both endpoint
    // rates; per-time errors are treated as independent (samples are i.i.d.
    // per time by construction, no autocorrelation correction).
    for (size_t j = 1; j < times_.size(); ++j) {
      const double h = times_[j] - times_[j - 1];
      report.cumulative[j] =
          report.cumulative[j - 1] + 0.5 * h * (rate_[j - 1] + rate_[j]);
      const double half_h = 0.5 * h;
      var += half_h * half_h * (se_rate_[j - 1] * se_rate_[j - 1] + se_rate_[j] * se_rate_[j]);
      report.mc_stderr[j] = std::sqrt(var);
    }
    report.total = report.cumulative.back();
    report.meta = std::move(meta);
    return report;
  }

  ScalarEstimate finish_scalar() const {
    const EntropyReport r = finish(ReportMeta{});
    return {r.total, r.mc_stderr.back()};
  }

 private:
  std::vector<double> times_;
  std::vector<double> rate_;
  std::vector<double> se_rate_;
};

Eigen::VectorXd column_squared_norms(const Eigen::MatrixXd& m) {
  return m.colwise().squaredNorm().transpose();
}

}  // namespace

DataSampler gaussian_data_sampler(const JointGaussianSpec& spec) {
  const auto llt = spd_cholesky(spec.cov_x, "gaussian_data_sampler: Sigma_X");
  const Eigen::MatrixXd l = llt.matrixL();
  const int dim = spec.dim_x;
  return [l, dim](int n, rng::Stream& stream) -> Eigen::MatrixXd {
    return l * stream.normal_matrix(dim, n);
  };
}

DataSampler gaussian_dist_sampler(const GaussianDist& dist) {
  const auto llt = spd_cholesky(dist.cov, "gaussian_dist_sampler: covariance");
  const Eigen::MatrixXd l = llt.matrixL();
  const Eigen::VectorXd mean = dist.mean;
  return [l, mean](int n, rng::Stream& stream) -> Eigen::MatrixXd {
    return (l * stream.normal_matrix(mean.size(), n)).colwise() + mean;
  };
}

PairSampler gaussian_pair_sampler(const JointGaussianSpec& spec) {
  return [spec](int n, rng::Stream& stream) { return sample_pairs(spec, n, stream); };
}

Denoiser denoiser_from_field(std::shared_ptr<const ScoreField> field,
                             const DiffusionSchedule& sched) {
  return [field, sched](const Eigen::MatrixXd& x_s, double s) -> Eigen::MatrixXd {
    const KernelParams k = kernel_params(sched, s);
    if (k.mu < 1e-300) throw NumericalError("denoiser: mu(s) underflows");
    return (x_s + k.sigma2 * field->score(x_s, s, Eigen::MatrixXd())) / k.mu;
  };
}

Denoiser gaussian_denoiser(const JointGaussianSpec& spec, const DiffusionSchedule& sched) {
  return denoiser_from_field(std::make_shared<AnalyticMarginalScore>(spec, sched), sched);
}

EntropyReport total_entropy_path(const ScoreField& field, const DiffusionSchedule& sched,
                                 const DataSampler& data, long n_mc, std::uint64_t seed) {
  check_n_mc(n_mc);
  rng::Stream data_stream = rng::named_stream(seed, "stot-data");
  rng::Stream noise_stream = rng::named_stream(seed, "stot-noise");
  const Eigen::MatrixXd x = data(int(n_mc), data_stream);

  const auto grid = sched.grid();
  QuadratureAccumulator acc(grid);
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const Eigen::MatrixXd jumped = forward_jump_batch(sched, x, s, noise_stream);
    // grad log p_eq - grad log p = -x_s - score(x_s)
    const Eigen::MatrixXd diff = -jumped - field.score(jumped, s, Eigen::MatrixXd());
    acc.set_time(j, 0.5 * sched.sigma2(s) * column_squared_norms(diff));
  }

  ReportMeta meta{"total-entropy", n_mc, seed, std::string(field.tag()), {}};
  return acc.finish(std::move(meta));
}

double total_entropy_closed_form(const GaussianDist& data) {
  const auto llt = spd_cholesky(data.cov, "total_entropy_closed_form");
  const double dim = double(data.dim());
  return 0.5 * (data.cov.trace() + data.mean.squaredNorm() - dim - spd_log_det(llt));
}

double conditional_total_entropy_closed_form(const JointGaussianSpec& spec) {
  const GaussianDist cond = conditional_x_given_y(spec, Eigen::VectorXd::Zero(spec.dim_y));
  const auto llt_cond = spd_cholesky(cond.cov, "conditional_total_entropy: Sigma_X|Y");
  // E_Y ||mu_X|Y(y)||^2 = tr(Sigma_XY Sigma_Y^-1 Sigma_XY^T)
  const Eigen::MatrixXd cross = spec.cross_cov();
  const auto llt_y = spd_cholesky(spec.cov_y(), "conditional_total_entropy: Sigma_Y");
  const double mean_term = cross.cwiseProduct(llt_y.solve(cross.transpose()).transpose()).sum();
  return 0.5 *
         (cond.cov.trace() + mean_term - double(spec.dim_x) - spd_log_det(llt_cond));
}

namespace {

EntropyReport neural_entropy_impl(const ScoreField& field, const DiffusionSchedule& sched,
                                  const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, long n_mc,
                                  std::uint64_t seed, rng::Stream& noise_stream) {
  const auto grid = sched.grid();
  QuadratureAccumulator acc(grid);
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const Eigen::MatrixXd jumped = forward_jump_batch(sched, x, s, noise_stream);
    const Eigen::MatrixXd eps = field.epsilon(jumped, s, y);
    acc.set_time(j, 0.5 * sched.sigma2(s) * column_squared_norms(eps));
  }
  ReportMeta meta{"neural-entropy", n_mc, seed, std::string(field.tag()), {}};
  meta.extra["conditional"] = y.cols() > 0;
  return acc.finish(std::move(meta));
}

}  // namespace

EntropyReport neural_entropy(const ScoreField& field, const DiffusionSchedule& sched,
                             const DataSampler& data, long n_mc, std::uint64_t seed) {
  check_n_mc(n_mc);
  rng::Stream data_stream = rng::named_stream(seed, "snn-data");
  rng::Stream noise_stream = rng::named_stream(seed, "snn-noise");
  const Eigen::MatrixXd x = data(int(n_mc), data_stream);
  return neural_entropy_impl(field, sched, x, Eigen::MatrixXd(), n_mc, seed, noise_stream);
}

EntropyReport neural_entropy(const ScoreField& field, const DiffusionSchedule& sched,
                             const PairSampler& pairs, long n_mc, std::uint64_t seed) {
  check_n_mc(n_mc);
  rng::Stream data_stream = rng::named_stream(seed, "snn-data");
  rng::Stream noise_stream = rng::named_stream(seed, "snn-noise");
  const auto [x, y] = pairs(int(n_mc), data_stream);
  return neural_entropy_impl(field, sched, x, y, n_mc, seed, noise_stream);
}

EntropyReport minde_mi(const ScoreField& cond_field, const ScoreField& marg_field,
                       const DiffusionSchedule& sched, const PairSampler& pairs, long n_mc,
                       std::uint64_t seed) {
  check_n_mc(n_mc);
  require(cond_field.dim() == marg_field.dim(), "minde_mi: field dimension mismatch");
  rng::Stream data_stream = rng::named_stream(seed, "minde-data");
  rng::Stream noise_stream = rng::named_stream(seed, "minde-noise");
  const auto [x, y] = pairs(int(n_mc), data_stream);

  // With two epsilon-parameterized fields the equilibrium scores cancel
  // algebraically, so the integrand is formed from epsilon differences
  // (identical bits to the score-difference route).
  const bool use_epsilon = cond_field.has_native_epsilon() && marg_field.has_native_epsilon();

  const auto grid = sched.grid();
  QuadratureAccumulator acc(grid);
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const Eigen::MatrixXd jumped = forward_jump_batch(sched, x, s, noise_stream);
    Eigen::MatrixXd diff;
    if (use_epsilon) {
      diff = cond_field.epsilon(jumped, s, y);
      diff -= marg_field.epsilon(jumped, s, Eigen::MatrixXd());
    } else {
      diff = cond_field.score(jumped, s, y);
      diff -= marg_field.score(jumped, s, Eigen::MatrixXd());
    }
    acc.set_time(j, 0.5 * sched.sigma2(s) * column_squared_norms(diff));
  }

  ReportMeta meta{"minde-mi", n_mc, seed,
                  std::string(cond_field.tag()) + "|" + std::string(marg_field.tag()),
                  {}};
  meta.extra["epsilon_form"] = use_epsilon;
  return acc.finish(std::move(meta));
}

namespace {

Eigen::VectorXd hutchinson_divergence(const ScoreField& field, const Eigen::MatrixXd& x, double s,
                                      const Eigen::MatrixXd& cond,
                                      const HutchinsonOptions& opts, rng::Stream& stream) {
  Eigen::VectorXd div = Eigen::VectorXd::Zero(x.cols());
  Eigen::MatrixXd probe(x.rows(), x.cols());
  for (int k = 0; k < opts.probes; ++k) {
    for (Eigen::Index j = 0; j < probe.cols(); ++j)
      for (Eigen::Index i = 0; i < probe.rows(); ++i)
        probe(i, j) = stream.next_u64() & 1 ? 1.0 : -1.0;
    const Eigen::MatrixXd forward = field.score(x + opts.step * probe, s, cond);
    const Eigen::MatrixXd backward = field.score(x - opts.step * probe, s, cond);
    div += ((forward - backward).cwiseProduct(probe).colwise().sum() / (2.0 * opts.step))
               .transpose();
  }
  return div / double(opts.probes);
}

ScalarEstimate entropy_via_scores_impl(const ScoreField& field, const DiffusionSchedule& sched,
                                       const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                       std::uint64_t seed, const HutchinsonOptions& opts,
                                       rng::Stream& noise_stream) {
  const int dim = int(x.rows());
  rng::Stream probe_stream = rng::named_stream(seed, "entropy-probes");

  const auto grid = sched.grid();
  QuadratureAccumulator acc(grid);
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const double beta = sched.sigma2(s);
    const Eigen::MatrixXd jumped = forward_jump_batch(sched, x, s, noise_stream);
    const Eigen::MatrixXd score = field.score(jumped, s, y);
    const Eigen::VectorXd div =
        field.has_exact_divergence()
            ? field.divergence(jumped, s, y)
            : hutchinson_divergence(field, jumped, s, y, opts, probe_stream);
    // (sigma^2/2)||score||^2 - div(b_plus) + sigma^2 div(score), with
    // div(b_plus) = -beta D / 2 for the VP drift.
    Eigen::VectorXd values = 0.5 * beta * column_squared_norms(score);
    values.array() += 0.5 * beta * double(dim);
    values += beta * div;
    acc.set_time(j, values);
  }

  // S_0: differential entropy of the near-equilibrium terminal state N(0, I).
  ScalarEstimate est = acc.finish_scalar();
  est.value += 0.5 * double(dim) * (kLog2Pi + 1.0);
  return est;
}

}  // namespace

ScalarEstimate entropy_via_scores(const ScoreField& marg_field, const DiffusionSchedule& sched,
                                  const DataSampler& data, long n_mc, std::uint64_t seed,
                                  const HutchinsonOptions& hutchinson) {
  check_n_mc(n_mc);
  rng::Stream data_stream = rng::named_stream(seed, "entropy-data");
  rng::Stream noise_stream = rng::named_stream(seed, "entropy-noise");
  const Eigen::MatrixXd x = data(int(n_mc), data_stream);
  return entropy_via_scores_impl(marg_field, sched, x, Eigen::MatrixXd(), seed, hutchinson,
                                 noise_stream);
}

ScalarEstimate conditional_entropy_via_scores(const ScoreField& cond_field,
                                              const DiffusionSchedule& sched,
                                              const PairSampler& pairs, long n_mc,
                                              std::uint64_t seed,
                                              const HutchinsonOptions& hutchinson) {
  check_n_mc(n_mc);
  rng::Stream data_stream = rng::named_stream(seed, "entropy-data");
  rng::Stream noise_stream = rng::named_stream(seed, "entropy-noise");
  const auto [x, y] = pairs(int(n_mc), data_stream);
  return entropy_via_scores_impl(cond_field, sched, x, y, seed, hutchinson, noise_stream);
}

FactorizedEntropy factorized_entropy_report(const JointGaussianSpec& spec) {
  FactorizedEntropy out;
  out.marginal_kls.reserve(size_t(spec.dim_x));
  for (int k = 0; k < spec.dim_x; ++k) {
    const double v = spec.cov_x(k, k);
    out.marginal_kls.push_back(0.5 * (v - 1.0 - std::log(v)));
  }
  out.tc = total_correlation_gaussian(spec.cov_x);
  out.total = total_entropy_closed_form(GaussianDist{Eigen::VectorXd::Zero(spec.dim_x),
                                                     spec.cov_x});
  return out;
}

ScalarEstimate log_density_denoised_means(const Eigen::VectorXd& x,
                                          const DiffusionSchedule& sched, const Denoiser& denoiser,
                                          long n_mc, std::uint64_t seed) {
  check_n_mc(n_mc);
  rng::Stream noise_stream = rng::named_stream(seed, "logdensity-noise");

  const auto grid = sched.grid();
  QuadratureAccumulator acc(grid);
  const Eigen::MatrixXd x_rep = x.replicate(1, Eigen::Index(n_mc));
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const KernelParams k = kernel_params(sched, s);
    const double prefactor =
        0.5 * sched.sigma2(s) * (k.mu * k.mu) / (k.sigma2 * k.sigma2);  // B(s)
    const Eigen::MatrixXd jumped = forward_jump_batch(sched, x_rep, s, noise_stream);
    const Eigen::MatrixXd err = denoiser(jumped, s).colwise() - x;
    acc.set_time(j, prefactor * column_squared_norms(err));
  }
  return acc.finish_scalar();
}

namespace {

std::vector<double> entropy_rate_curve(const Eigen::VectorXd& eigenvalues, double mean_term,
                                       int dim, const DiffusionSchedule& sched) {
  const auto grid = sched.grid();
  std::vector<double> rate(grid.size());
  for (size_t j = 0; j < grid.size(); ++j) {
    const double s = grid[j];
    const double a = sched.alpha(s);
    double trace = 0.0, trace_inv = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
      const double lam = a * eigenvalues(i) + (1.0 - a);
      trace += lam;
      trace_inv += 1.0 / lam;
    }
    rate[j] = 0.5 * sched.sigma2(s) * (trace + trace_inv - 2.0 * dim + a * mean_term);
  }
  return rate;
}

}  // namespace

std::vector<double> marginal_entropy_rate_curve(const JointGaussianSpec& spec,
                                                const DiffusionSchedule& sched) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.cov_x, Eigen::EigenvaluesOnly);
  return entropy_rate_curve(eig.eigenvalues(), 0.0, spec.dim_x, sched);
}

std::vector<double> conditional_entropy_rate_curve(const JointGaussianSpec& spec,
                                                   const DiffusionSchedule& sched) {
  const GaussianDist cond = conditional_x_given_y(spec, Eigen::VectorXd::Zero(spec.dim_y));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cond.cov, Eigen::EigenvaluesOnly);
  const Eigen::MatrixXd cross = spec.cross_cov();
  const auto llt_y = spd_cholesky(spec.cov_y(), "conditional_entropy_rate_curve: Sigma_Y");
  const double mean_term =
      cross.cwiseProduct(llt_y.solve(cross.transpose()).transpose()).sum();
  return entropy_rate_curve(eig.eigenvalues(), mean_term, spec.dim_x, sched);
}

}  // namespace diffinfo

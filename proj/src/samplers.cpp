#include "diffinfo/samplers.hpp"

#include <cmath>
#include <sstream>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

void check_finite(const Eigen::MatrixXd& state, int step_index, double s, const char* who) {
  if (state.allFinite()) return;
  std::ostringstream msg;
  msg << who << ": non-finite state at step " << step_index << " (s = " << s
      << "), max |x| = " << state.cwiseAbs().maxCoeff();
  throw NumericalError(msg.str());
}

std::vector<rng::Stream> chain_streams(std::uint64_t seed, std::string_view name, int n) {
  std::vector<rng::Stream> streams;
  streams.reserve(size_t(n));
  rng::Stream base = rng::named_stream(seed, name);
  for (int i = 0; i < n; ++i) streams.push_back(base.child(std::uint64_t(i)));
  return streams;
}

Eigen::MatrixXd initial_gaussian(std::vector<rng::Stream>& streams, int dim) {
  Eigen::MatrixXd x(dim, Eigen::Index(streams.size()));
  for (size_t i = 0; i < streams.size(); ++i) x.col(Eigen::Index(i)) = streams[i].normal_vector(dim);
  return x;
}

}  // namespace

std::vector<std::pair<double, Eigen::VectorXd>> forward_sde_em(const DiffusionSchedule& sched,
                                                               const Eigen::VectorXd& x0,
                                                               rng::Stream& stream) {
  const int k = sched.steps;
  const double h = sched.horizon / double(k - 1);
  std::vector<std::pair<double, Eigen::VectorXd>> path;
  path.reserve(size_t(k));
  Eigen::VectorXd x = x0;
  path.emplace_back(0.0, x);
  for (int i = 0; i + 1 < k; ++i) {
    const double s = h * i;
    const double b = sched.beta(s);
    x += -0.5 * b * x * h + std::sqrt(b * h) * stream.normal_vector(x.size());
    path.emplace_back(h * (i + 1), x);
  }
  return path;
}

Eigen::MatrixXd reverse_sde_em(const ScoreField& field, const DiffusionSchedule& sched, int n,
                               const SamplerConfig& cfg,
                               const std::optional<Eigen::VectorXd>& condition) {
  require(cfg.mode == SamplerConfig::Mode::kSde, "reverse_sde_em: cfg.mode must be sde");
  require(cfg.steps >= 2, "reverse_sde_em: steps must be >= 2");
  require(n >= 1, "reverse_sde_em: n must be >= 1");

  Eigen::MatrixXd cond(field.dim(), 0);
  if (condition) {
    cond.resize(condition->size(), 1);
    cond.col(0) = *condition;
  }

  auto streams = chain_streams(cfg.seed, "reverse-sde", n);
  Eigen::MatrixXd x = initial_gaussian(streams, field.dim());

  const double lo = sched.s_cutoff();
  const double h = (sched.horizon - lo) / double(cfg.steps - 1);
  double s = sched.horizon;
  for (int i = 0; i + 1 < cfg.steps; ++i) {
    const double b = sched.beta(s);
    // dX = (b/2 X + b score) dt + sqrt(b) dB, t running against s
    Eigen::MatrixXd drift = b * field.score(x, s, cond);
    drift += 0.5 * b * x;
    const double noise_scale = std::sqrt(b * h);
    for (int j = 0; j < n; ++j)
      x.col(j) += h * drift.col(j) + noise_scale * streams[size_t(j)].normal_vector(x.rows());
    s -= h;
    check_finite(x, i + 1, s, "reverse_sde_em");
  }
  return x;
}

namespace {

Eigen::MatrixXd integrate_pf_ode(const ScoreField& cond_field, const ScoreField& marg_field,
                                 const Eigen::MatrixXd& y_cols, const DiffusionSchedule& sched,
                                 const SamplerConfig& cfg, int n) {
  require(cfg.mode == SamplerConfig::Mode::kOde, "pf_ode_cfg: cfg.mode must be ode");
  require(cfg.steps >= 2, "pf_ode_cfg: steps must be >= 2");
  require(cfg.cfg_weight >= 0.0, "pf_ode_cfg: cfg_weight must be >= 0");
  require(cond_field.dim() == marg_field.dim(), "pf_ode_cfg: field dimension mismatch");
  require(y_cols.cols() == 1 || y_cols.cols() == n, "pf_ode_cfg: need 1 or n conditions");

  const double w = cfg.cfg_weight;
  // Reverse-time drift: (beta/2) (x + cond + w (cond - marg)); the guided
  // score is combined so that identical fields are exactly w-invariant.
  auto drift = [&](const Eigen::MatrixXd& x, double s) {
    Eigen::MatrixXd guided = cond_field.score(x, s, y_cols);
    if (w != 0.0) {
      const Eigen::MatrixXd unguided = marg_field.score(x, s, Eigen::MatrixXd());
      guided += w * (guided - unguided);
    }
    guided += x;
    guided *= 0.5 * sched.beta(s);
    return guided;
  };

  auto streams = chain_streams(cfg.seed, "pf-ode", n);
  Eigen::MatrixXd x = initial_gaussian(streams, cond_field.dim());

  const double lo = sched.s_cutoff();
  const double h = (sched.horizon - lo) / double(cfg.steps - 1);
  double s = sched.horizon;
  for (int i = 0; i + 1 < cfg.steps; ++i) {
    const Eigen::MatrixXd k1 = drift(x, s);
    const Eigen::MatrixXd k2 = drift(x + 0.5 * h * k1, s - 0.5 * h);
    const Eigen::MatrixXd k3 = drift(x + 0.5 * h * k2, s - 0.5 * h);
    const Eigen::MatrixXd k4 = drift(x + h * k3, s - h);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s -= h;
    check_finite(x, i + 1, s, "pf_ode_cfg");
  }
  return x;
}

}  // namespace

Eigen::MatrixXd pf_ode_cfg(const ScoreField& cond_field, const ScoreField& marg_field,
                           const Eigen::VectorXd& y, const DiffusionSchedule& sched,
                           const SamplerConfig& cfg, int n) {
  require(n >= 1, "pf_ode_cfg: n must be >= 1");
  Eigen::MatrixXd y_cols(y.size(), 1);
  y_cols.col(0) = y;
  return integrate_pf_ode(cond_field, marg_field, y_cols, sched, cfg, n);
}

Eigen::MatrixXd pf_ode_cfg_paired(const ScoreField& cond_field, const ScoreField& marg_field,
                                  const Eigen::MatrixXd& y_cols, const DiffusionSchedule& sched,
                                  const SamplerConfig& cfg) {
  require(y_cols.cols() >= 1, "pf_ode_cfg_paired: need at least one condition column");
  return integrate_pf_ode(cond_field, marg_field, y_cols, sched, cfg, int(y_cols.cols()));
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_cfg_pairs(const JointGaussianSpec& spec,
                                                             const DiffusionSchedule& sched,
                                                             double w, int n, int ode_steps,
                                                             std::uint64_t seed) {
  require(n >= 1, "sample_cfg_pairs: n must be >= 1");
  rng::Stream y_stream = rng::named_stream(seed, "cfg-pairs-y");
  const auto llt_y = spd_cholesky(spec.cov_y(), "sample_cfg_pairs: Sigma_Y");
  const Eigen::MatrixXd y = llt_y.matrixL() * y_stream.normal_matrix(spec.dim_y, n);

  const AnalyticConditionalScore cond_field(spec, sched);
  const AnalyticMarginalScore marg_field(spec, sched);
  SamplerConfig cfg;
  cfg.steps = ode_steps;
  cfg.cfg_weight = w;
  cfg.seed = rng::mix64(seed ^ rng::fnv1a64("cfg-pairs-ode"));
  cfg.mode = SamplerConfig::Mode::kOde;
  Eigen::MatrixXd x = pf_ode_cfg_paired(cond_field, marg_field, y, sched, cfg);
  return {std::move(x), y};
}

}  // namespace diffinfo

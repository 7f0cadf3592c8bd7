#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffinfo/samplers.hpp"
#include "diffinfo/training.hpp"

using namespace diffinfo;

namespace {

JointGaussianSpec one_d_marginal(double sigma_x2) {
  JointGaussianSpec spec = build_joint_spec(1, 1, 1.0, 1e-12, 0);
  spec.cov_x(0, 0) = sigma_x2;
  spec.mixing(0, 0) = 0.0;
  return spec;
}

Eigen::VectorXd sample_mean(const Eigen::MatrixXd& cols) { return cols.rowwise().mean(); }

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& cols) {
  const Eigen::MatrixXd centered = cols.colwise() - Eigen::VectorXd(cols.rowwise().mean());
  return centered * centered.transpose() / double(cols.cols() - 1);
}

// Squared 2-Wasserstein distance between 1-D Gaussians.
double w2_squared_1d(double m1, double s1, double m2, double s2) {
  return (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
}

// The guided probability-flow ODE is affine in (x, y); integrating the
// coefficient matrices with RK4 gives the exact output distribution. This is
// the independent oracle for pf_ode_cfg.
struct AffineFlow {
  Eigen::MatrixXd mix;    // G: condition -> output
  Eigen::MatrixXd noise;  // M: initial draw -> output
};

AffineFlow cfg_affine_oracle(const JointGaussianSpec& spec, const DiffusionSchedule& sched,
                             double w, int steps) {
  const int d = spec.dim_x;
  const GaussianDist cond0 = conditional_x_given_y(spec, Eigen::VectorXd::Zero(spec.dim_y));
  const Eigen::MatrixXd cross = spec.cross_cov();
  const Eigen::MatrixXd gain =
      spd_cholesky(spec.cov_y(), "oracle").solve(cross.transpose()).transpose();

  // Reverse-time dynamics dx/dt = a(t) x + b(t) y with t = T - s:
  // the drift (beta/2)(x + (1+w) s_c - w s_m) expanded over the Gaussian
  // scores.
  auto coeffs = [&](double s, Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    const double al = sched.alpha(s);
    const double beta = sched.beta(s);
    const Eigen::MatrixXd inv_c =
        spd_cholesky(diffused_cov(cond0.cov, al), "c").solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd inv_m =
        spd_cholesky(diffused_cov(spec.cov_x, al), "m").solve(Eigen::MatrixXd::Identity(d, d));
    a = 0.5 * beta * (Eigen::MatrixXd::Identity(d, d) - (1.0 + w) * inv_c + w * inv_m);
    b = 0.5 * beta * (1.0 + w) * std::sqrt(al) * (inv_c * gain);
  };

  AffineFlow flow{Eigen::MatrixXd::Zero(d, spec.dim_y), Eigen::MatrixXd::Identity(d, d)};
  const double lo = sched.s_cutoff();
  const double h = (sched.horizon - lo) / double(steps - 1);
  double s = sched.horizon;
  for (int i = 0; i + 1 < steps; ++i) {
    Eigen::MatrixXd a1, b1, a2, b2, a4, b4;
    coeffs(s, a1, b1);
    coeffs(s - 0.5 * h, a2, b2);
    coeffs(s - h, a4, b4);
    auto step = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                    const Eigen::MatrixXd& m, const Eigen::MatrixXd& g, Eigen::MatrixXd& dm,
                    Eigen::MatrixXd& dg) {
      dm = a * m;
      dg = a * g + b;
    };
    Eigen::MatrixXd k1m, k1g, k2m, k2g, k3m, k3g, k4m, k4g;
    step(a1, b1, flow.noise, flow.mix, k1m, k1g);
    step(a2, b2, flow.noise + 0.5 * h * k1m, flow.mix + 0.5 * h * k1g, k2m, k2g);
    step(a2, b2, flow.noise + 0.5 * h * k2m, flow.mix + 0.5 * h * k2g, k3m, k3g);
    step(a4, b4, flow.noise + h * k3m, flow.mix + h * k3g, k4m, k4g);
    flow.noise += (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
    flow.mix += (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
    s -= h;
  }
  return flow;
}

}  // namespace

TEST_CASE("forward_sde_em") {
  rng::Stream stream(1, 0);
  SUBCASE("vanishing rate freezes the state") {
    const DiffusionSchedule still = vp_schedule(1e-9, 1e-9, 1.0, 200, 1e-3);
    const Eigen::VectorXd x0 = stream.normal_vector(3);
    const auto path = forward_sde_em(still, x0, stream);
    CHECK(path.size() == 200);
    CHECK((path.back().second - x0).cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("terminal variance approaches the kernel variance") {
    const DiffusionSchedule sched = vp_schedule(0.1, 20.0, 1.0, 500, 1e-3);
    rng::Stream s(21, 0);
    const int n = 10000;
    double sum_sq = 0.0;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    for (int i = 0; i < n; ++i) {
      const double v = forward_sde_em(sched, zero, s).back().second(0);
      sum_sq += v * v;
    }
    const double expected = 1.0 - sched.alpha(sched.horizon);
    CHECK(std::abs(sum_sq / n - expected) < 3.0 * expected * std::sqrt(2.0 / n) + 0.01);
  }
  SUBCASE("fixed stream reproduces the trajectory") {
    const DiffusionSchedule sched = default_vp_schedule();
    rng::Stream s1(5, 3), s2(5, 3);
    const Eigen::VectorXd x0 = Eigen::VectorXd::Ones(2);
    const auto p1 = forward_sde_em(sched, x0, s1);
    const auto p2 = forward_sde_em(sched, x0, s2);
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second == p2[i].second);
  }
}

TEST_CASE("reverse_sde_em") {
  const DiffusionSchedule sched = vp_schedule(0.1, 20.0, 1.0, 1000, 1e-3);

  SUBCASE("analytic marginal field recovers the 1-D target variance within 5%") {
    const auto spec = one_d_marginal(1.0);
    const AnalyticMarginalScore field(spec, sched);
    SamplerConfig cfg;
    cfg.steps = 1000;
    cfg.seed = 31;
    const Eigen::MatrixXd samples = reverse_sde_em(field, sched, 10000, cfg);
    const double var = sample_cov(samples)(0, 0);
    CHECK(std::abs(var - 1.0) < 0.05);
  }
  SUBCASE("conditional oracle: mean and covariance approach conditional_x_given_y") {
    const auto spec = build_joint_spec(4, 3, 0.8, 1e-6, 47);
    const AnalyticConditionalScore field(spec, sched);
    rng::Stream s(3, 0);
    const Eigen::VectorXd y = s.normal_vector(3);
    SamplerConfig cfg;
    cfg.steps = 1000;
    cfg.seed = 7;
    const Eigen::MatrixXd samples = reverse_sde_em(field, sched, 8000, cfg, y);
    const GaussianDist target = conditional_x_given_y(spec, y);
    CHECK((sample_mean(samples) - target.mean).norm() < 0.05 * std::max(1.0, target.mean.norm()));
    CHECK((sample_cov(samples) - target.cov).norm() < 0.08 * target.cov.norm());
  }
  SUBCASE("cfg_weight is ignored in plain SDE mode") {
    const auto spec = one_d_marginal(2.0);
    const AnalyticMarginalScore field(spec, sched);
    SamplerConfig a;
    a.steps = 100;
    a.seed = 13;
    SamplerConfig b = a;
    b.cfg_weight = 3.5;
    CHECK(reverse_sde_em(field, sched, 50, a) == reverse_sde_em(field, sched, 50, b));
  }
  SUBCASE("zero network reduces to the forward dynamics") {
    // score = -x: the entropy-matching drift collapses to b_plus, whose
    // stationary state is N(0, I).
    NetConfig nc;
    nc.data_dim = 2;
    nc.hidden = {8};
    const LearnedScoreField field(zeros_like(net_init(nc, 0)));
    SamplerConfig cfg;
    cfg.steps = 500;
    cfg.seed = 3;
    const Eigen::MatrixXd samples = reverse_sde_em(field, sched, 8000, cfg);
    const Eigen::MatrixXd cov = sample_cov(samples);
    CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.06);
    CHECK(sample_mean(samples).cwiseAbs().maxCoeff() < 0.05);
  }
  SUBCASE("W2 distance to the target shrinks when steps double 250 -> 1000") {
    const auto spec = one_d_marginal(4.0);
    const AnalyticMarginalScore field(spec, sched);
    SamplerConfig coarse;
    coarse.steps = 250;
    coarse.seed = 11;
    SamplerConfig fine = coarse;
    fine.steps = 1000;
    const Eigen::MatrixXd lo = reverse_sde_em(field, sched, 20000, coarse);
    const Eigen::MatrixXd hi = reverse_sde_em(field, sched, 20000, fine);
    const double w2_lo = w2_squared_1d(sample_mean(lo)(0), std::sqrt(sample_cov(lo)(0, 0)), 0.0, 2.0);
    const double w2_hi = w2_squared_1d(sample_mean(hi)(0), std::sqrt(sample_cov(hi)(0, 0)), 0.0, 2.0);
    CHECK(w2_hi < w2_lo);
  }
  SUBCASE("mode contract") {
    const auto spec = one_d_marginal(1.0);
    const AnalyticMarginalScore field(spec, sched);
    SamplerConfig cfg;
    cfg.mode = SamplerConfig::Mode::kOde;
    CHECK_THROWS_AS(reverse_sde_em(field, sched, 10, cfg), std::invalid_argument);
  }
}

TEST_CASE("pf_ode_cfg") {
  const DiffusionSchedule sched = vp_schedule(0.1, 20.0, 1.0, 1000, 1e-3);
  const auto spec = build_joint_spec(4, 3, 0.8, 1e-6, 47);
  const AnalyticConditionalScore cond(spec, sched);
  const AnalyticMarginalScore marg(spec, sched);
  rng::Stream s(5, 0);
  const Eigen::VectorXd y = s.normal_vector(3);

  SamplerConfig cfg;
  cfg.mode = SamplerConfig::Mode::kOde;
  cfg.steps = 500;
  cfg.seed = 17;

  SUBCASE("w = 0 reduces to the plain conditional flow") {
    cfg.cfg_weight = 0.0;
    const Eigen::MatrixXd samples = pf_ode_cfg(cond, marg, y, sched, cfg, 10000);
    const GaussianDist target = conditional_x_given_y(spec, y);
    CHECK((sample_mean(samples) - target.mean).norm() < 0.05 * std::max(1.0, target.mean.norm()));
    CHECK((sample_cov(samples) - target.cov).norm() < 0.05 * target.cov.norm());
  }
  SUBCASE("guidance sharpens the 1-D conditional") {
    JointGaussianSpec pair = build_joint_spec(1, 1, 1.0, 1e-12, 0);
    pair.mixing(0, 0) = 1.0;
    pair.cov_x(0, 0) = 1.0;
    const AnalyticConditionalScore c1(pair, sched);
    const AnalyticMarginalScore m1(pair, sched);
    Eigen::VectorXd y1(1);
    y1 << 1.0;
    double previous = std::numeric_limits<double>::infinity();
    for (double w : {0.0, 1.0, 2.0, 4.0}) {
      cfg.cfg_weight = w;
      const Eigen::MatrixXd out = pf_ode_cfg(c1, m1, y1, sched, cfg, 6000);
      const double var = sample_cov(out)(0, 0);
      CHECK(var < previous + 1e-12);
      previous = var;
    }
  }
  SUBCASE("fixed seed is bit-reproducible") {
    cfg.cfg_weight = 1.5;
    CHECK(pf_ode_cfg(cond, marg, y, sched, cfg, 64) == pf_ode_cfg(cond, marg, y, sched, cfg, 64));
  }
  SUBCASE("equal fields are exactly w-invariant") {
    // With A = 0 the conditional's gain vanishes, so the conditional and
    // marginal fields produce identical values and the (1+w)/-w combination
    // collapses algebraically.
    auto indep = spec;
    indep.mixing.setZero();
    const AnalyticConditionalScore c0(indep, sched);
    const AnalyticMarginalScore m0(indep, sched);
    cfg.steps = 120;
    cfg.cfg_weight = 0.0;
    const Eigen::MatrixXd base = pf_ode_cfg(c0, m0, y, sched, cfg, 32);
    for (double w : {1.0, 3.0, 6.0}) {
      cfg.cfg_weight = w;
      CHECK(pf_ode_cfg(c0, m0, y, sched, cfg, 32) == base);
    }
  }
  SUBCASE("sampled distribution matches the affine-flow oracle at w = 2") {
    cfg.cfg_weight = 2.0;
    cfg.steps = 500;
    const Eigen::MatrixXd out = pf_ode_cfg(cond, marg, y, sched, cfg, 20000);
    const AffineFlow flow = cfg_affine_oracle(spec, sched, 2.0, 500);
    const Eigen::VectorXd expected_mean = flow.mix * y;
    const Eigen::MatrixXd expected_cov = flow.noise * flow.noise.transpose();
    CHECK((sample_mean(out) - expected_mean).norm() < 0.05 * std::max(1.0, expected_mean.norm()));
    CHECK((sample_cov(out) - expected_cov).norm() < 0.08 * expected_cov.norm());
  }
  SUBCASE("negative weight rejected") {
    cfg.cfg_weight = -0.5;
    CHECK_THROWS_AS(pf_ode_cfg(cond, marg, y, sched, cfg, 8), std::invalid_argument);
  }
}

TEST_CASE("sample_cfg_pairs draws y from its marginal and x from the guided flow") {
  const DiffusionSchedule sched = vp_schedule(0.1, 20.0, 1.0, 400, 1e-3);
  const auto spec = build_joint_spec(3, 2, 1.0, 1e-6, 19);
  const auto [x, y] = sample_cfg_pairs(spec, sched, 0.0, 20000, 400, 4);
  REQUIRE(x.cols() == 20000);

  // w = 0: the joint should match the true model's joint covariance.
  const Eigen::MatrixXd cov_y = sample_cov(y);
  CHECK((cov_y - spec.cov_y()).norm() < 0.06 * spec.cov_y().norm());
  Eigen::MatrixXd stacked(5, x.cols());
  stacked.topRows(3) = x;
  stacked.bottomRows(2) = y;
  const Eigen::MatrixXd cov_joint = sample_cov(stacked);
  CHECK((cov_joint - joint_covariance(spec)).norm() < 0.08 * joint_covariance(spec).norm());

  const auto [x2, y2] = sample_cfg_pairs(spec, sched, 0.0, 200, 400, 4);
  CHECK(x2 == x.leftCols(200).eval());

  SUBCASE("guidance strengthens the sample correlation") {
    const auto [xg, yg] = sample_cfg_pairs(spec, sched, 4.0, 8000, 400, 6);
    // conditional spread of x shrinks under guidance: compare residual
    // variance after regressing x on y
    auto residual_var = [](const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys) {
      const Eigen::MatrixXd cxy = xs * ys.transpose() / double(xs.cols());
      const Eigen::MatrixXd cyy = ys * ys.transpose() / double(ys.cols());
      const Eigen::MatrixXd cxx = xs * xs.transpose() / double(xs.cols());
      return (cxx - cxy * cyy.ldlt().solve(cxy.transpose())).trace();
    };
    const auto [x0, y0] = sample_cfg_pairs(spec, sched, 0.0, 8000, 400, 6);
    CHECK(residual_var(xg, yg) < residual_var(x0, y0));
  }
}

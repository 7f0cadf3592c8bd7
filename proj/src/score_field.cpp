#include "diffinfo/score_field.hpp"

#include <algorithm>
#include <cmath>

#include "diffinfo/common.hpp"

namespace diffinfo {

Eigen::VectorXd ScoreField::divergence_impl(const Eigen::MatrixXd&, double,
                                            const Eigen::MatrixXd&) const {
  throw std::logic_error("ScoreField: no exact divergence; use the Hutchinson estimator");
}

Eigen::VectorXd ScoreField::score_at(const Eigen::VectorXd& x, double s) const {
  return score(x, s, Eigen::MatrixXd());
}

Eigen::VectorXd ScoreField::score_at(const Eigen::VectorXd& x, double s,
                                     const Eigen::VectorXd& y) const {
  return score(x, s, y);
}

AnalyticGaussianField::AnalyticGaussianField(Eigen::MatrixXd base_cov,
                                             const DiffusionSchedule& sched)
    : base_cov_(std::move(base_cov)), sched_(sched), grid_(sched.grid()) {
  factors_.reserve(grid_.size());
  for (double s : grid_)
    factors_.emplace_back(
        spd_cholesky(diffused_cov(base_cov_, sched_.alpha(s)), "AnalyticGaussianField"));
}

const Eigen::LLT<Eigen::MatrixXd>* AnalyticGaussianField::cached_factor(double s) const {
  const auto it = std::lower_bound(grid_.begin(), grid_.end(), s);
  if (it != grid_.end() && *it == s) return &factors_[size_t(it - grid_.begin())];
  return nullptr;
}

Eigen::MatrixXd AnalyticGaussianField::solve_diffused(const Eigen::MatrixXd& rhs, double s) const {
  if (const auto* f = cached_factor(s)) return f->solve(rhs);
  return spd_cholesky(diffused_cov(base_cov_, sched_.alpha(s)), "AnalyticGaussianField")
      .solve(rhs);
}

double AnalyticGaussianField::trace_inverse(double s) const {
  auto frobenius_of_l_inverse = [this](const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const Eigen::MatrixXd l_inv = llt.matrixL().solve(Eigen::MatrixXd::Identity(dim(), dim()));
    return l_inv.squaredNorm();
  };
  if (const auto* f = cached_factor(s)) return frobenius_of_l_inverse(*f);
  return frobenius_of_l_inverse(
      spd_cholesky(diffused_cov(base_cov_, sched_.alpha(s)), "AnalyticGaussianField"));
}

Eigen::VectorXd AnalyticGaussianField::divergence_impl(const Eigen::MatrixXd& x, double s,
                                                       const Eigen::MatrixXd&) const {
  return Eigen::VectorXd::Constant(x.cols(), -trace_inverse(s));
}

AnalyticConditionalScore::AnalyticConditionalScore(const JointGaussianSpec& spec,
                                                   const DiffusionSchedule& sched)
    : AnalyticGaussianField(conditional_x_given_y(spec, Eigen::VectorXd::Zero(spec.dim_y)).cov,
                            sched) {
  const auto llt_y = spd_cholesky(spec.cov_y(), "AnalyticConditionalScore: Sigma_Y");
  gain_ = llt_y.solve(spec.cross_cov().transpose()).transpose();
}

Eigen::MatrixXd AnalyticConditionalScore::score_impl(const Eigen::MatrixXd& x, double s,
                                                const Eigen::MatrixXd& cond) const {
  require(cond.cols() == 1 || cond.cols() == x.cols(),
          "AnalyticConditionalScore: a condition per point (or one shared) is required");
  const double root_alpha = std::sqrt(sched_.alpha(s));
  Eigen::MatrixXd centered = x;
  if (cond.cols() == 1)
    centered.colwise() -= Eigen::VectorXd(root_alpha * (gain_ * cond.col(0)));
  else
    centered -= root_alpha * (gain_ * cond);
  return -solve_diffused(centered, s);
}

AnalyticMarginalScore::AnalyticMarginalScore(const JointGaussianSpec& spec,
                                             const DiffusionSchedule& sched)
    : AnalyticGaussianField(spec.cov_x, sched) {}

AnalyticMarginalScore::AnalyticMarginalScore(Eigen::MatrixXd cov, const DiffusionSchedule& sched)
    : AnalyticGaussianField(std::move(cov), sched) {}

Eigen::MatrixXd AnalyticMarginalScore::score_impl(const Eigen::MatrixXd& x, double s,
                                             const Eigen::MatrixXd& cond) const {
  require(cond.cols() == 0, "AnalyticMarginalScore: marginal score takes no condition");
  return -solve_diffused(x, s);
}

AnalyticJointScore::AnalyticJointScore(const JointGaussianSpec& spec,
                                       const DiffusionSchedule& sched)
    : AnalyticGaussianField(joint_covariance(spec), sched) {}

Eigen::MatrixXd AnalyticJointScore::score_impl(const Eigen::MatrixXd& x, double s,
                                          const Eigen::MatrixXd& cond) const {
  require(cond.cols() == 0, "AnalyticJointScore: joint score takes no condition");
  return -solve_diffused(x, s);
}

LearnedScoreField::LearnedScoreField(NetworkParams params) : params_(std::move(params)) {}

Eigen::MatrixXd LearnedScoreField::epsilon_impl(const Eigen::MatrixXd& x, double s,
                                           const Eigen::MatrixXd& cond) const {
  const Eigen::VectorXd times = Eigen::VectorXd::Constant(x.cols(), s);
  return net_forward_batch(params_, x, times, cond);
}

Eigen::MatrixXd LearnedScoreField::score_impl(const Eigen::MatrixXd& x, double s,
                                         const Eigen::MatrixXd& cond) const {
  return -x + epsilon_impl(x, s, cond);
}

CfgCombinedScore::CfgCombinedScore(std::shared_ptr<const ScoreField> cond,
                                   std::shared_ptr<const ScoreField> marg, double weight)
    : cond_(std::move(cond)), marg_(std::move(marg)), weight_(weight) {
  require(weight_ >= 0.0, "CfgCombinedScore: weight must be >= 0");
  require(cond_ && marg_ && cond_->dim() == marg_->dim(),
          "CfgCombinedScore: fields must share dimension");
}

Eigen::MatrixXd CfgCombinedScore::score_impl(const Eigen::MatrixXd& x, double s,
                                        const Eigen::MatrixXd& cond) const {
  Eigen::MatrixXd guided = cond_->score(x, s, cond);
  if (weight_ == 0.0) return guided;
  // The marginal side always evaluates unconditionally (for a label-dropped
  // network that is the null-embedding route).
  const Eigen::MatrixXd unguided = marg_->score(x, s, Eigen::MatrixXd());
  guided += weight_ * (guided - unguided);
  return guided;
}

}  // namespace diffinfo

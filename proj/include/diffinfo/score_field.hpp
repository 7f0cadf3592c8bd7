#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "diffinfo/diffusion.hpp"
#include "diffinfo/gaussian_model.hpp"
#include "diffinfo/nn.hpp"

namespace diffinfo {

/// Uniform evaluation interface over analytic scores, learned networks and
/// CFG-combined scores. Column i of `x` is one point; `cond` may have 0
/// columns (unconditional), 1 column (shared condition) or one column per
/// point. Evaluation is pure and reentrant; analytic fields pre-factorize
/// their covariances on the schedule grid before any parallel use.
class ScoreField {
 public:
  virtual ~ScoreField() = default;

  virtual int dim() const = 0;
  virtual std::string_view tag() const = 0;

  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double s,
                        const Eigen::MatrixXd& cond = Eigen::MatrixXd()) const {
    return score_impl(x, s, cond);
  }

  /// Entropy-matching residual: score(x) = -x + epsilon(x). Fields that are
  /// natively epsilon-parameterized evaluate the residual directly, so the
  /// equilibrium term never enters epsilon differences.
  Eigen::MatrixXd epsilon(const Eigen::MatrixXd& x, double s,
                          const Eigen::MatrixXd& cond = Eigen::MatrixXd()) const {
    return epsilon_impl(x, s, cond);
  }
  virtual bool has_native_epsilon() const { return false; }

  /// Per-point divergence of the score, exact where available.
  virtual bool has_exact_divergence() const { return false; }
  Eigen::VectorXd divergence(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond = Eigen::MatrixXd()) const {
    return divergence_impl(x, s, cond);
  }

  Eigen::VectorXd score_at(const Eigen::VectorXd& x, double s) const;
  Eigen::VectorXd score_at(const Eigen::VectorXd& x, double s, const Eigen::VectorXd& y) const;

 protected:
  virtual Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                                     const Eigen::MatrixXd& cond) const = 0;
  virtual Eigen::MatrixXd epsilon_impl(const Eigen::MatrixXd& x, double s,
                                       const Eigen::MatrixXd& cond) const {
    return score_impl(x, s, cond) + x;
  }
  virtual Eigen::VectorXd divergence_impl(const Eigen::MatrixXd& x, double s,
                                          const Eigen::MatrixXd& cond) const;
};

/// Shared machinery for the analytic Gaussian fields: a Cholesky factor of
/// alpha(s) Sigma + (1 - alpha(s)) I, cached at every grid time.
class AnalyticGaussianField : public ScoreField {
 public:
  AnalyticGaussianField(Eigen::MatrixXd base_cov, const DiffusionSchedule& sched);

  int dim() const override { return int(base_cov_.rows()); }
  bool has_exact_divergence() const override { return true; }

 protected:
  Eigen::VectorXd divergence_impl(const Eigen::MatrixXd& x, double s,
                                  const Eigen::MatrixXd& cond) const override;

  /// Solves (alpha Sigma + (1-alpha) I) out = rhs, using the cache when s is
  /// a grid time.
  Eigen::MatrixXd solve_diffused(const Eigen::MatrixXd& rhs, double s) const;
  double trace_inverse(double s) const;

  Eigen::MatrixXd base_cov_;
  DiffusionSchedule sched_;

 private:
  const Eigen::LLT<Eigen::MatrixXd>* cached_factor(double s) const;
  std::vector<double> grid_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
};

/// grad log p(x_s, s | y) of the joint Gaussian under the VP process.
class AnalyticConditionalScore final : public AnalyticGaussianField {
 public:
  AnalyticConditionalScore(const JointGaussianSpec& spec, const DiffusionSchedule& sched);
  std::string_view tag() const override { return "analytic-conditional"; }

  /// Conditional mean of the undiffused model, Sigma_XY Sigma_Y^-1 y.
  Eigen::MatrixXd conditional_mean(const Eigen::MatrixXd& y) const { return gain_ * y; }

 protected:
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override;

 private:
  Eigen::MatrixXd gain_;  // Sigma_XY Sigma_Y^-1
};

/// grad log p(x_s, s) of the X marginal.
class AnalyticMarginalScore final : public AnalyticGaussianField {
 public:
  AnalyticMarginalScore(const JointGaussianSpec& spec, const DiffusionSchedule& sched);
  AnalyticMarginalScore(Eigen::MatrixXd cov, const DiffusionSchedule& sched);
  std::string_view tag() const override { return "analytic-marginal"; }

 protected:
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override;
};

/// grad log p(r_s, s) of the stacked joint vector R = (X, Y).
class AnalyticJointScore final : public AnalyticGaussianField {
 public:
  AnalyticJointScore(const JointGaussianSpec& spec, const DiffusionSchedule& sched);
  std::string_view tag() const override { return "analytic-marginal"; }

 protected:
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override;
};

/// Score induced by a trained entropy-matching network:
/// score(x, s; y) = -x + eps_theta(x, s; y). Natively epsilon-parameterized.
class LearnedScoreField final : public ScoreField {
 public:
  explicit LearnedScoreField(NetworkParams params);

  int dim() const override { return params_.cfg.data_dim; }
  std::string_view tag() const override { return "learned"; }
  bool has_native_epsilon() const override { return true; }

  const NetworkParams& params() const { return params_; }

 protected:
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override;
  Eigen::MatrixXd epsilon_impl(const Eigen::MatrixXd& x, double s,
                               const Eigen::MatrixXd& cond) const override;

 private:
  NetworkParams params_;
};

/// CFG combination cond + w (cond - marg) == (1+w) cond - w marg. Written in
/// the first form so that identical fields are exactly w-invariant.
class CfgCombinedScore final : public ScoreField {
 public:
  CfgCombinedScore(std::shared_ptr<const ScoreField> cond, std::shared_ptr<const ScoreField> marg,
                   double weight);

  int dim() const override { return cond_->dim(); }
  std::string_view tag() const override { return "cfg-combined"; }
  double weight() const { return weight_; }

 protected:
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override;

 private:
  std::shared_ptr<const ScoreField> cond_;
  std::shared_ptr<const ScoreField> marg_;
  double weight_;
};

}  // namespace diffinfo

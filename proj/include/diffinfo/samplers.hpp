#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "diffinfo/diffusion.hpp"
#include "diffinfo/score_field.hpp"

namespace diffinfo {

struct SamplerConfig {
  enum class Mode { kSde, kOde };
  int steps = 1000;
  double cfg_weight = 0.0;  // w >= 0; ignored outside guided sampling
  std::uint64_t seed = 0;
  Mode mode = Mode::kSde;
};

/// Euler-Maruyama path of the forward SDE dX = -(beta/2) X ds + sqrt(beta) dB
/// on a uniform grid over [0, T]. Returns (s, state) pairs including s = 0.
std::vector<std::pair<double, Eigen::VectorXd>> forward_sde_em(const DiffusionSchedule& sched,
                                                               const Eigen::VectorXd& x0,
                                                               rng::Stream& stream);

/// Reverse SDE in entropy-matching parameterization, integrated with
/// Euler-Maruyama from X ~ N(0, I) at s = T down to s = s_cutoff. Returns one
/// terminal sample per column; chain i draws from the stream child (seed, i)
/// so results are independent of scheduling order.
Eigen::MatrixXd reverse_sde_em(const ScoreField& field, const DiffusionSchedule& sched, int n,
                               const SamplerConfig& cfg,
                               const std::optional<Eigen::VectorXd>& condition = std::nullopt);

/// Probability-flow ODE with classifier-free guidance, fixed-step RK4 on the
/// reversed grid. The drift combines the two fields as
/// cond + w (cond - marg); w = 0 is the plain conditional flow. The only
/// randomness is the N(0, I) initial draw.
Eigen::MatrixXd pf_ode_cfg(const ScoreField& cond_field, const ScoreField& marg_field,
                           const Eigen::VectorXd& y, const DiffusionSchedule& sched,
                           const SamplerConfig& cfg, int n);

/// Batched variant: one chain per column of `y_cols`.
Eigen::MatrixXd pf_ode_cfg_paired(const ScoreField& cond_field, const ScoreField& marg_field,
                                  const Eigen::MatrixXd& y_cols, const DiffusionSchedule& sched,
                                  const SamplerConfig& cfg);

/// (x, y) pairs from the guided model: y ~ N(0, Sigma_Y), then x generated by
/// the probability-flow ODE with the analytic scores of `spec` at guidance
/// weight w. This is the training-data generator for the guidance experiment.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_cfg_pairs(const JointGaussianSpec& spec,
                                                             const DiffusionSchedule& sched,
                                                             double w, int n, int ode_steps,
                                                             std::uint64_t seed);

}  // namespace diffinfo

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "diffinfo/diffusion.hpp"
#include "diffinfo/nn.hpp"
#include "diffinfo/score_field.hpp"

namespace diffinfo {

enum class Weighting {
  kUnit,         // lambda(s) = 1
  kHalfSigmaSq,  // lambda(s) = sigma(s)^2 / 2; preferred when the model feeds MI estimation
};

struct TrainingConfig {
  int batch_size = 128;
  int epochs = 50;
  Weighting weighting = Weighting::kUnit;
  double label_drop_prob = 0.1;  // conditional training only
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
};

/// Denoising entropy-matching objective, Monte-Carlo form: per example draws
/// s ~ U(s_cutoff, T) and a forward jump, then averages
/// lambda(s) || grad log p_eq(x_s) - grad log p(x_s | x, 0) + eps_theta ||^2.
/// `y` may have 0 columns (unconditional network) or one per example.
double em_denoising_loss(const NetworkParams& params, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& y, const DiffusionSchedule& sched,
                         const TrainingConfig& cfg, rng::Stream& stream);

struct TrainResult {
  NetworkParams params;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Trains eps_theta on (x, y) pairs; with y empty this is marginal training.
/// Conditions are dropped with probability label_drop_prob and replaced by the
/// learned null embedding, so one network can parameterize both the
/// conditional and the marginal drift. `on_epoch` (optional) observes
/// intermediate parameters for checkpointing.
TrainResult train_conditional(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              const DiffusionSchedule& sched, const TrainingConfig& cfg,
                              const NetConfig& net_cfg,
                              const std::function<void(int, const NetworkParams&)>& on_epoch = {});

/// Score field induced by an entropy-matching parameterization:
/// score(x, s; y) = -x + eps_theta(x, s; y).
std::shared_ptr<ScoreField> score_from_entropy_param(NetworkParams params);

/// Epsilon-form view of a score field (eps = score + x). Fields that already
/// carry a native epsilon pass through unchanged, so the round trip with
/// score_from_entropy_param is exact.
std::shared_ptr<const ScoreField> em_from_score_param(std::shared_ptr<const ScoreField> field);

}  // namespace diffinfo

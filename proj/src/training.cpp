#include "diffinfo/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

double lambda_weight(Weighting w, const DiffusionSchedule& sched, double s) {
  return w == Weighting::kUnit ? 1.0 : 0.5 * sched.sigma2(s);
}

// Shared forward pass of the denoising objective. Per example: drawing order
// is s first, then the jump noise, from the same stream.
double loss_and_output_grad(const NetworkParams& params, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& y, const std::vector<std::uint8_t>* drop,
                            const DiffusionSchedule& sched, const TrainingConfig& cfg,
                            rng::Stream& stream, ForwardCache* cache,
                            Eigen::MatrixXd* grad_out) {
  const Eigen::Index n = x.cols();
  require(n >= 1, "em_denoising_loss: batch is empty");
  if (!x.allFinite() || (y.size() > 0 && !y.allFinite()))
    throw std::invalid_argument("em_denoising_loss: non-finite batch");

  const double lo = sched.s_cutoff();
  Eigen::VectorXd s(n), lam(n), inv_root_var(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s(i) = lo + (sched.horizon - lo) * stream.uniform();
    lam(i) = lambda_weight(cfg.weighting, sched, s(i));
    inv_root_var(i) = 1.0 / std::sqrt(1.0 - sched.alpha(s(i)));
  }

  Eigen::MatrixXd noise = stream.normal_matrix(x.rows(), n);
  Eigen::MatrixXd jumped(x.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = sched.alpha(s(i));
    jumped.col(i) = std::sqrt(a) * x.col(i) + std::sqrt(1.0 - a) * noise.col(i);
  }

  // grad log p_eq - grad log p(x_s | x, 0) = -x_s + eta / sqrt(Sigma(s))
  Eigen::MatrixXd residual = -jumped;
  residual += noise * inv_root_var.asDiagonal();

  const Eigen::MatrixXd out = net_forward_batch(params, jumped, s, y, drop, cache);
  residual += out;

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += lam(i) * residual.col(i).squaredNorm();
  loss /= double(n);
  if (!std::isfinite(loss)) throw NumericalError("em_denoising_loss: non-finite loss");

  if (grad_out) {
    *grad_out = residual * (2.0 / double(n) * lam).asDiagonal();
  }
  return loss;
}

}  // namespace

double em_denoising_loss(const NetworkParams& params, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& y, const DiffusionSchedule& sched,
                         const TrainingConfig& cfg, rng::Stream& stream) {
  return loss_and_output_grad(params, x, y, nullptr, sched, cfg, stream, nullptr, nullptr);
}

TrainResult train_conditional(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              const DiffusionSchedule& sched, const TrainingConfig& cfg,
                              const NetConfig& net_cfg,
                              const std::function<void(int, const NetworkParams&)>& on_epoch) {
  const Eigen::Index n = x.cols();
  require(n >= 1, "train_conditional: dataset is empty");
  require(y.cols() == 0 || y.cols() == n, "train_conditional: need one condition per example");
  require(cfg.label_drop_prob >= 0.0 && cfg.label_drop_prob <= 1.0,
          "train_conditional: label_drop_prob outside [0, 1]");
  const bool conditional = y.cols() > 0;

  NetConfig nc = net_cfg;
  nc.data_dim = int(x.rows());
  nc.cond_dim = conditional ? int(y.rows()) : 0;
  nc.time_scale = sched.horizon;

  rng::Stream init_stream = rng::named_stream(cfg.seed, "train-init");
  NetworkParams params = net_init(nc, init_stream.next_u64());
  OptimizerState opt =
      adam_init(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);

  rng::Stream batch_stream = rng::named_stream(cfg.seed, "train-batch");
  rng::Stream loss_stream = rng::named_stream(cfg.seed, "train-loss");
  rng::Stream drop_stream = rng::named_stream(cfg.seed, "train-drop");

  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int batch = int(std::min<Eigen::Index>(cfg.batch_size, n));

  TrainResult result;
  result.epoch_loss.reserve(size_t(cfg.epochs));
  Eigen::MatrixXd bx(x.rows(), batch), by(conditional ? y.rows() : 0, conditional ? batch : 0);
  std::vector<std::uint8_t> drop(size_t(batch), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates reshuffle per epoch.
    for (Eigen::Index i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[batch_stream.uniform_below(std::uint64_t(i) + 1)]);

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (Eigen::Index start = 0; start + batch <= n; start += batch, ++n_batches) {
      for (int j = 0; j < batch; ++j) {
        const Eigen::Index idx = order[size_t(start + j)];
        bx.col(j) = x.col(idx);
        if (conditional) {
          by.col(j) = y.col(idx);
          drop[size_t(j)] = drop_stream.uniform() < cfg.label_drop_prob ? 1 : 0;
        }
      }
      ForwardCache cache;
      Eigen::MatrixXd grad_out;
      const double loss = loss_and_output_grad(params, bx, by, conditional ? &drop : nullptr,
                                               sched, cfg, loss_stream, &cache, &grad_out);
      if (loss > cfg.divergence_threshold) {
        std::ostringstream msg;
        msg << "train_conditional: loss diverged (" << loss << " > " << cfg.divergence_threshold
            << ") at epoch " << epoch << ", batch " << n_batches;
        throw NumericalError(msg.str());
      }
      const NetworkParams grads = net_backward(params, cache, grad_out);
      adam_step(params, grads, opt);
      epoch_loss += loss;
    }
    result.epoch_loss.push_back(epoch_loss / std::max(1, n_batches));
    if (on_epoch) on_epoch(epoch, params);
  }

  result.params = std::move(params);
  return result;
}

namespace {

class EpsilonFromScoreField final : public ScoreField {
 public:
  explicit EpsilonFromScoreField(std::shared_ptr<const ScoreField> inner)
      : inner_(std::move(inner)) {}

  int dim() const override { return inner_->dim(); }
  std::string_view tag() const override { return inner_->tag(); }
  bool has_native_epsilon() const override { return true; }
  bool has_exact_divergence() const override { return inner_->has_exact_divergence(); }

 protected:
  Eigen::MatrixXd epsilon_impl(const Eigen::MatrixXd& x, double s,
                               const Eigen::MatrixXd& cond) const override {
    return inner_->score(x, s, cond) + x;
  }
  Eigen::MatrixXd score_impl(const Eigen::MatrixXd& x, double s,
                             const Eigen::MatrixXd& cond) const override {
    return inner_->score(x, s, cond);
  }
  Eigen::VectorXd divergence_impl(const Eigen::MatrixXd& x, double s,
                                  const Eigen::MatrixXd& cond) const override {
    return inner_->divergence(x, s, cond);
  }

 private:
  std::shared_ptr<const ScoreField> inner_;
};

}  // namespace

std::shared_ptr<ScoreField> score_from_entropy_param(NetworkParams params) {
  return std::make_shared<LearnedScoreField>(std::move(params));
}

std::shared_ptr<const ScoreField> em_from_score_param(std::shared_ptr<const ScoreField> field) {
  require(field != nullptr, "em_from_score_param: null field");
  if (field->has_native_epsilon()) return field;
  return std::make_shared<EpsilonFromScoreField>(std::move(field));
}

}  // namespace diffinfo

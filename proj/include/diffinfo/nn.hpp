#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffinfo/rng.hpp"

namespace diffinfo {

/// MLP shape for the entropy-matching network eps_theta(x, s; y). The input
/// is [x, sinusoidal features of s/T, projected condition]; when the
/// condition is absent or dropped, the learned null embedding is projected
/// instead.
struct NetConfig {
  int data_dim = 1;
  int cond_dim = 0;                      // 0 = unconditional network
  std::vector<int> hidden = {256, 256, 256};
  int time_features = 32;                // even; frequencies geometric in [1, 1000]
  int cond_features = 32;                // width of the condition projection
  double time_scale = 1.0;               // horizon T used to normalize s

  int input_dim() const {
    return data_dim + time_features + (cond_dim > 0 ? cond_features : 0);
  }
};

struct NetworkParams {
  NetConfig cfg;
  std::vector<Eigen::MatrixXd> weights;  // hidden layers then output layer
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd cond_w;                // cond_features x cond_dim
  Eigen::VectorXd cond_b;                // cond_features
  Eigen::VectorXd null_embedding;        // cond_dim; substituted when dropped
  std::uint64_t init_seed = 0;
};

NetworkParams net_init(const NetConfig& cfg, std::uint64_t seed);
NetworkParams zeros_like(const NetworkParams& params);

/// Visit every parameter tensor in a fixed order (weights/biases, condition
/// projection, null embedding). Adam, the gradient checker and checkpointing
/// all iterate through this.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  for (size_t l = 0; l < p.weights.size(); ++l) {
    fn(p.weights[l]);
    fn(p.biases[l]);
  }
  if (p.cfg.cond_dim > 0) {
    fn(p.cond_w);
    fn(p.cond_b);
    fn(p.null_embedding);
  }
}

std::size_t param_count(const NetworkParams& params);
double get_param(const NetworkParams& params, std::size_t flat_index);
void set_param(NetworkParams& params, std::size_t flat_index, double value);

struct ForwardCache {
  Eigen::MatrixXd input;                  // assembled first-layer input
  Eigen::MatrixXd cond_input;             // condition columns after null substitution
  std::vector<Eigen::MatrixXd> pre_acts;  // hidden pre-activations
  std::vector<Eigen::MatrixXd> acts;      // hidden activations
  std::vector<std::uint8_t> used_null;    // per column
};

/// Batched forward pass; column i is one sample. `cond` may have 0 columns
/// (every sample routed through the null embedding), 1 column (broadcast), or
/// one column per sample. `drop` forces the null embedding per column.
Eigen::MatrixXd net_forward_batch(const NetworkParams& params, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& s, const Eigen::MatrixXd& cond,
                                  const std::vector<std::uint8_t>* drop = nullptr,
                                  ForwardCache* cache = nullptr);

Eigen::VectorXd net_forward(const NetworkParams& params, const Eigen::VectorXd& x, double s,
                            const std::optional<Eigen::VectorXd>& condition = std::nullopt);

/// Exact reverse-mode gradients of a scalar loss whose gradient with respect
/// to the network output is `grad_out` (same shape as the forward output).
NetworkParams net_backward(const NetworkParams& params, const ForwardCache& cache,
                           const Eigen::MatrixXd& grad_out);

struct OptimizerState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

OptimizerState adam_init(const NetworkParams& params, double learning_rate, double beta1 = 0.9,
                         double beta2 = 0.999, double epsilon = 1e-8);
void adam_step(NetworkParams& params, const NetworkParams& grads, OptimizerState& state);

nlohmann::json checkpoint_to_json(const NetworkParams& params);
NetworkParams checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const NetworkParams& params, const std::string& path);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace diffinfo

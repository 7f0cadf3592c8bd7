#include "diffinfo/nn.hpp"

#include <cmath>
#include <fstream>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

Eigen::MatrixXd silu(const Eigen::MatrixXd& a) {
  return a.array() / (1.0 + (-a.array()).exp());
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& a) {
  const auto sig = 1.0 / (1.0 + (-a.array()).exp());
  return sig * (1.0 + a.array() * (1.0 - sig));
}

Eigen::MatrixXd time_features(const NetConfig& cfg, const Eigen::VectorXd& s) {
  const int half = cfg.time_features / 2;
  Eigen::MatrixXd feats(cfg.time_features, s.size());
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(1000.0, half > 1 ? double(k) / double(half - 1) : 0.0);
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      const double angle = freq * s(j) / cfg.time_scale;
      feats(2 * k, j) = std::sin(angle);
      feats(2 * k + 1, j) = std::cos(angle);
    }
  }
  return feats;
}

void fill_fan_in_scaled(rng::Stream& stream, Eigen::MatrixXd& w) {
  const double scale = 1.0 / std::sqrt(double(w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * stream.normal();
}

}  // namespace

NetworkParams net_init(const NetConfig& cfg, std::uint64_t seed) {
  require(cfg.data_dim >= 1, "net_init: data_dim must be >= 1");
  require(!cfg.hidden.empty(), "net_init: need at least one hidden layer");
  require(cfg.time_features >= 2 && cfg.time_features % 2 == 0,
          "net_init: time_features must be even and >= 2");
  for (int h : cfg.hidden) require(h >= 1, "net_init: zero-width layer");

  NetworkParams p;
  p.cfg = cfg;
  p.init_seed = seed;
  rng::Stream stream = rng::named_stream(seed, "net-init");

  int in = cfg.input_dim();
  for (size_t l = 0; l < cfg.hidden.size() + 1; ++l) {
    const int out = l < cfg.hidden.size() ? cfg.hidden[l] : cfg.data_dim;
    Eigen::MatrixXd w(out, in);
    fill_fan_in_scaled(stream, w);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(out));
    in = out;
  }
  if (cfg.cond_dim > 0) {
    // Zero-initialized conditioning path: a network that never sees a live
    // condition during training stays exactly condition-independent.
    p.cond_w = Eigen::MatrixXd::Zero(cfg.cond_features, cfg.cond_dim);
    p.cond_b = Eigen::VectorXd::Zero(cfg.cond_features);
    p.null_embedding = Eigen::VectorXd::Zero(cfg.cond_dim);
  }
  return p;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams z = params;
  for_each_tensor(z, [](auto& t) { t.setZero(); });
  return z;
}

std::size_t param_count(const NetworkParams& params) {
  std::size_t n = 0;
  for_each_tensor(const_cast<NetworkParams&>(params), [&](auto& t) { n += size_t(t.size()); });
  return n;
}

double get_param(const NetworkParams& params, std::size_t flat_index) {
  double out = 0.0;
  bool found = false;
  for_each_tensor(const_cast<NetworkParams&>(params), [&](auto& t) {
    if (found) return;
    if (flat_index < size_t(t.size())) {
      out = t.data()[flat_index];
      found = true;
    } else {
      flat_index -= size_t(t.size());
    }
  });
  require(found, "get_param: index out of range");
  return out;
}

void set_param(NetworkParams& params, std::size_t flat_index, double value) {
  bool found = false;
  for_each_tensor(params, [&](auto& t) {
    if (found) return;
    if (flat_index < size_t(t.size())) {
      t.data()[flat_index] = value;
      found = true;
    } else {
      flat_index -= size_t(t.size());
    }
  });
  require(found, "set_param: index out of range");
}

Eigen::MatrixXd net_forward_batch(const NetworkParams& params, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& s, const Eigen::MatrixXd& cond,
                                  const std::vector<std::uint8_t>* drop, ForwardCache* cache) {
  const NetConfig& cfg = params.cfg;
  const Eigen::Index n = x.cols();
  require(x.rows() == cfg.data_dim, "net_forward: x has wrong dimension");
  require(s.size() == n, "net_forward: one time per sample required");
  if (!x.allFinite() || !s.allFinite())
    throw std::invalid_argument("net_forward: non-finite input");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  c.input.resize(cfg.input_dim(), n);
  c.input.topRows(cfg.data_dim) = x;
  c.input.middleRows(cfg.data_dim, cfg.time_features) = time_features(cfg, s);

  if (cfg.cond_dim > 0) {
    require(cond.rows() == cfg.cond_dim || cond.cols() == 0,
            "net_forward: condition has wrong dimension");
    require(cond.cols() == 0 || cond.cols() == 1 || cond.cols() == n,
            "net_forward: condition must have 0, 1 or n columns");
    c.cond_input.resize(cfg.cond_dim, n);
    c.used_null.assign(size_t(n), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool dropped = drop && (*drop)[size_t(j)];
      if (cond.cols() == 0 || dropped) {
        c.cond_input.col(j) = params.null_embedding;
        c.used_null[size_t(j)] = 1;
      } else {
        c.cond_input.col(j) = cond.cols() == 1 ? cond.col(0) : cond.col(j);
      }
    }
    c.input.bottomRows(cfg.cond_features) =
        (params.cond_w * c.cond_input).colwise() + params.cond_b;
  } else {
    require(cond.cols() == 0, "net_forward: condition passed to an unconditional network");
  }

  const size_t n_hidden = params.cfg.hidden.size();
  c.pre_acts.resize(n_hidden);
  c.acts.resize(n_hidden);
  const Eigen::MatrixXd* h = &c.input;
  for (size_t l = 0; l < n_hidden; ++l) {
    c.pre_acts[l] = (params.weights[l] * (*h)).colwise() + params.biases[l];
    c.acts[l] = silu(c.pre_acts[l]);
    h = &c.acts[l];
  }
  return (params.weights[n_hidden] * (*h)).colwise() + params.biases[n_hidden];
}

Eigen::VectorXd net_forward(const NetworkParams& params, const Eigen::VectorXd& x, double s,
                            const std::optional<Eigen::VectorXd>& condition) {
  Eigen::MatrixXd cond(params.cfg.cond_dim, condition ? 1 : 0);
  if (condition) cond.col(0) = *condition;
  Eigen::VectorXd sv(1);
  sv(0) = s;
  return net_forward_batch(params, x, sv, cond);
}

NetworkParams net_backward(const NetworkParams& params, const ForwardCache& cache,
                           const Eigen::MatrixXd& grad_out) {
  const NetConfig& cfg = params.cfg;
  NetworkParams g = zeros_like(params);
  const size_t n_hidden = cfg.hidden.size();

  Eigen::MatrixXd delta = grad_out;  // gradient w.r.t. the current layer output
  for (size_t l = n_hidden + 1; l-- > 0;) {
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.acts[l - 1];
    g.weights[l] = delta * below.transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l == 0) {
      delta = params.weights[0].transpose() * delta;
      break;
    }
    delta = params.weights[l].transpose() * delta;
    delta = delta.cwiseProduct(silu_grad(cache.pre_acts[l - 1]));
  }

  if (cfg.cond_dim > 0) {
    const Eigen::MatrixXd d_proj = delta.bottomRows(cfg.cond_features);
    g.cond_w = d_proj * cache.cond_input.transpose();
    g.cond_b = d_proj.rowwise().sum();
    const Eigen::MatrixXd d_cond = params.cond_w.transpose() * d_proj;
    for (Eigen::Index j = 0; j < d_cond.cols(); ++j)
      if (cache.used_null[size_t(j)]) g.null_embedding += d_cond.col(j);
  }
  return g;
}

OptimizerState adam_init(const NetworkParams& params, double learning_rate, double beta1,
                         double beta2, double epsilon) {
  OptimizerState state;
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  state.learning_rate = learning_rate;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.epsilon = epsilon;
  return state;
}

void adam_step(NetworkParams& params, const NetworkParams& grads, OptimizerState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));

  auto* m = &state.first_moment;
  auto* v = &state.second_moment;

  // Walk the four structures in lockstep through the flat tensor order.
  std::vector<double*> p_ptrs, g_ptrs, m_ptrs, v_ptrs;
  std::vector<Eigen::Index> sizes;
  for_each_tensor(params, [&](auto& t) {
    p_ptrs.push_back(t.data());
    sizes.push_back(t.size());
  });
  for_each_tensor(const_cast<NetworkParams&>(grads), [&](auto& t) { g_ptrs.push_back(t.data()); });
  for_each_tensor(*m, [&](auto& t) { m_ptrs.push_back(t.data()); });
  for_each_tensor(*v, [&](auto& t) { v_ptrs.push_back(t.data()); });

  for (size_t k = 0; k < sizes.size(); ++k) {
    Eigen::Map<Eigen::ArrayXd> p(p_ptrs[k], sizes[k]);
    Eigen::Map<Eigen::ArrayXd> grad(g_ptrs[k], sizes[k]);
    Eigen::Map<Eigen::ArrayXd> m1(m_ptrs[k], sizes[k]);
    Eigen::Map<Eigen::ArrayXd> m2(v_ptrs[k], sizes[k]);
    m1 = state.beta1 * m1 + (1.0 - state.beta1) * grad;
    m2 = state.beta2 * m2 + (1.0 - state.beta2) * grad.square();
    p -= state.learning_rate * (m1 / bc1) / ((m2 / bc2).sqrt() + state.epsilon);
  }
}

nlohmann::json checkpoint_to_json(const NetworkParams& params) {
  nlohmann::json j;
  j["format"] = "diffinfo-net";
  j["version"] = 1;
  j["init_seed"] = params.init_seed;
  j["config"] = {{"data_dim", params.cfg.data_dim},
                 {"cond_dim", params.cfg.cond_dim},
                 {"hidden", params.cfg.hidden},
                 {"time_features", params.cfg.time_features},
                 {"cond_features", params.cfg.cond_features},
                 {"time_scale", params.cfg.time_scale}};
  std::vector<std::array<long, 2>> shapes;
  std::vector<double> values;
  values.reserve(param_count(params));
  for_each_tensor(const_cast<NetworkParams&>(params), [&](auto& t) {
    shapes.push_back({long(t.rows()), long(t.cols())});
    values.insert(values.end(), t.data(), t.data() + t.size());
  });
  j["shapes"] = shapes;
  j["values"] = values;
  return j;
}

NetworkParams checkpoint_from_json(const nlohmann::json& j) {
  require(j.at("format") == "diffinfo-net" && j.at("version") == 1,
          "checkpoint_from_json: unknown checkpoint format");
  NetConfig cfg;
  const auto& jc = j.at("config");
  cfg.data_dim = jc.at("data_dim").get<int>();
  cfg.cond_dim = jc.at("cond_dim").get<int>();
  cfg.hidden = jc.at("hidden").get<std::vector<int>>();
  cfg.time_features = jc.at("time_features").get<int>();
  cfg.cond_features = jc.at("cond_features").get<int>();
  cfg.time_scale = jc.at("time_scale").get<double>();

  NetworkParams p = net_init(cfg, j.at("init_seed").get<std::uint64_t>());
  const auto values = j.at("values").get<std::vector<double>>();
  require(values.size() == param_count(p), "checkpoint_from_json: value count mismatch");
  size_t offset = 0;
  size_t tensor = 0;
  const auto shapes = j.at("shapes").get<std::vector<std::array<long, 2>>>();
  for_each_tensor(p, [&](auto& t) {
    require(tensor < shapes.size() && shapes[tensor][0] == t.rows() &&
                shapes[tensor][1] == t.cols(),
            "checkpoint_from_json: shape mismatch");
    std::copy(values.begin() + long(offset), values.begin() + long(offset) + t.size(), t.data());
    offset += size_t(t.size());
    ++tensor;
  });
  return p;
}

void save_checkpoint(const NetworkParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(params);
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace diffinfo

#include "diffinfo/runner.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "diffinfo/common.hpp"
#include "diffinfo/estimators.hpp"
#include "diffinfo/kelly.hpp"
#include "diffinfo/samplers.hpp"
#include "diffinfo/training.hpp"

namespace diffinfo::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kExperiments = {"gaussian-entropy", "cfg-mi",   "kelly",
                                               "train",            "estimate", "logdensity"};

// ---------------------------------------------------------------------------
// Schema checking
// ---------------------------------------------------------------------------

class FieldChecker {
 public:
  explicit FieldChecker(const json& root) : root_(root) {}

  const json* get(const std::string& path) const {
    const json* node = &root_;
    std::istringstream parts(path);
    std::string key;
    while (std::getline(parts, key, '.')) {
      if (!node->is_object() || !node->contains(key)) return nullptr;
      node = &(*node)[key];
    }
    return node;
  }

  void require_present(const std::string& path) {
    if (!get(path)) errors_.push_back(path + ": missing required field");
  }

  template <typename Pred>
  void check(const std::string& path, Pred pred, const std::string& expectation,
             bool required = true) {
    const json* node = get(path);
    if (!node) {
      if (required) errors_.push_back(path + ": missing required field");
      return;
    }
    if (!pred(*node)) errors_.push_back(path + ": expected " + expectation);
  }

  void positive_int(const std::string& path, bool required = true) {
    check(
        path, [](const json& v) { return v.is_number_integer() && v.get<long>() > 0; },
        "positive integer", required);
  }

  void positive_real(const std::string& path, bool required = true) {
    check(
        path, [](const json& v) { return v.is_number() && v.get<double>() > 0.0; },
        "positive real", required);
  }

  void string_field(const std::string& path, bool required = true) {
    check(
        path, [](const json& v) { return v.is_string(); }, "string", required);
  }

  std::vector<std::string> errors_;

 private:
  const json& root_;
};

void check_spec_section(FieldChecker& c, const std::string& prefix, bool noise_list_allowed) {
  c.positive_int(prefix + ".dim_x");
  if (noise_list_allowed) {
    c.check(
        prefix + ".noise_std",
        [](const json& v) {
          if (v.is_number()) return v.get<double>() > 0.0;
          if (!v.is_array() || v.empty()) return false;
          for (const auto& e : v)
            if (!e.is_number() || e.get<double>() <= 0.0) return false;
          return true;
        },
        "positive real or non-empty array of positive reals");
  } else {
    c.positive_real(prefix + ".noise_std");
  }
  c.positive_real(prefix + ".jitter", false);
}

void check_schedule_section(FieldChecker& c, const std::string& prefix) {
  c.positive_real(prefix + ".beta_min", false);
  c.positive_real(prefix + ".beta_max", false);
  c.positive_real(prefix + ".horizon", false);
  c.positive_int(prefix + ".steps", false);
  c.positive_real(prefix + ".eps_time", false);
}

void check_training_section(FieldChecker& c, const std::string& prefix) {
  c.positive_int(prefix + ".pairs");
  c.positive_int(prefix + ".batch_size", false);
  c.positive_int(prefix + ".epochs");
  c.check(
      prefix + ".weighting",
      [](const json& v) {
        return v.is_string() && (v == "unit" || v == "half-sigma-squared");
      },
      "\"unit\" or \"half-sigma-squared\"", false);
  c.check(
      prefix + ".label_drop_prob",
      [](const json& v) {
        return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
      },
      "probability in [0, 1]", false);
  c.check(
      prefix + ".protocol",
      [](const json& v) { return v.is_string() && (v == "pair" || v == "label-drop"); },
      "\"pair\" or \"label-drop\"", false);
}

// ---------------------------------------------------------------------------
// Section parsing (after validation)
// ---------------------------------------------------------------------------

JointGaussianSpec parse_spec(const json& section, int dim_y, double noise_std,
                             std::uint64_t seed) {
  return build_joint_spec(section.at("dim_x").get<int>(), dim_y, noise_std,
                          section.value("jitter", 1e-6), seed);
}

DiffusionSchedule parse_schedule(const json& config) {
  const json section = config.value("schedule", json::object());
  return vp_schedule(section.value("beta_min", 0.1), section.value("beta_max", 20.0),
                     section.value("horizon", 1.0), section.value("steps", 1000),
                     section.value("eps_time", 1e-3));
}

struct TrainingSetup {
  TrainingConfig cfg;
  NetConfig net;
  int pairs = 0;
  std::string protocol = "pair";
};

TrainingSetup parse_training(const json& section, std::uint64_t seed) {
  TrainingSetup setup;
  setup.pairs = section.at("pairs").get<int>();
  setup.cfg.batch_size = section.value("batch_size", 128);
  setup.cfg.epochs = section.at("epochs").get<int>();
  setup.cfg.weighting = section.value("weighting", std::string("half-sigma-squared")) == "unit"
                            ? Weighting::kUnit
                            : Weighting::kHalfSigmaSq;
  setup.cfg.label_drop_prob = section.value("label_drop_prob", 0.1);
  setup.cfg.learning_rate = section.value("lr", 1e-3);
  setup.cfg.seed = seed;
  setup.protocol = section.value("protocol", std::string("pair"));
  setup.net.hidden = section.value("hidden", std::vector<int>{256, 256, 256});
  setup.net.time_features = section.value("time_features", 32);
  setup.net.cond_features = section.value("cond_features", 32);
  return setup;
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

struct OutputCollector {
  fs::path dir;
  std::vector<std::string> files;
  json totals = json::object();

  fs::path path(const std::string& name) {
    files.push_back(name);
    return dir / name;
  }

  void write_json(const std::string& name, const json& value) {
    std::ofstream out(path(name));
    if (!out) throw std::runtime_error("cannot open output file " + name);
    out << value.dump(2) << '\n';
  }

  void write_report(const std::string& stem, const EntropyReport& report) {
    write_report_csv(report, (path(stem + ".csv")).string());
    write_report_meta(report, (path(stem + ".meta.json")).string());
  }
};

std::string sigma_tag(double sigma) {
  std::ostringstream tag;
  tag << sigma;
  std::string s = tag.str();
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

/// Runs `body(i)` for i in [0, cells) on up to `threads` workers. Each cell
/// owns its seeds and output slots, so the result is thread-count invariant.
void run_cells(int cells, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, cells));
  if (threads == 1) {
    for (int i = 0; i < cells; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < cells; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct TrainedPair {
  std::shared_ptr<ScoreField> cond;
  std::shared_ptr<ScoreField> marg;
  double final_loss_cond = 0.0;
  double final_loss_marg = 0.0;
};

/// Conditional + marginal fields per the configured protocol: either a pair
/// of networks, or one label-dropped network whose null route is the
/// marginal.
TrainedPair train_pair(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       const DiffusionSchedule& sched, TrainingSetup setup, std::uint64_t seed) {
  TrainedPair out;
  if (setup.protocol == "label-drop") {
    setup.cfg.seed = seed;
    TrainResult res = train_conditional(x, y, sched, setup.cfg, setup.net);
    out.final_loss_cond = out.final_loss_marg = res.epoch_loss.back();
    out.cond = score_from_entropy_param(res.params);
    out.marg = out.cond;
    return out;
  }
  TrainingConfig cond_cfg = setup.cfg;
  cond_cfg.seed = rng::mix64(seed ^ rng::fnv1a64("cond"));
  cond_cfg.label_drop_prob = 0.0;
  TrainResult cond_res = train_conditional(x, y, sched, cond_cfg, setup.net);
  TrainingConfig marg_cfg = setup.cfg;
  marg_cfg.seed = rng::mix64(seed ^ rng::fnv1a64("marg"));
  TrainResult marg_res = train_conditional(x, Eigen::MatrixXd(), sched, marg_cfg, setup.net);
  out.final_loss_cond = cond_res.epoch_loss.back();
  out.final_loss_marg = marg_res.epoch_loss.back();
  out.cond = score_from_entropy_param(cond_res.params);
  out.marg = score_from_entropy_param(marg_res.params);
  return out;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

void run_gaussian_entropy(const json& config, OutputCollector& out, std::uint64_t seed,
                          int threads) {
  const DiffusionSchedule sched = parse_schedule(config);
  const json& spec_section = config.at("spec");
  std::vector<double> noise_levels;
  if (spec_section.at("noise_std").is_array())
    noise_levels = spec_section.at("noise_std").get<std::vector<double>>();
  else
    noise_levels.push_back(spec_section.at("noise_std").get<double>());
  const int dim_y = spec_section.at("dim_y").get<int>();
  const long n_mc = config.at("estimation").at("n_mc").get<long>();
  const bool train_models = config.value("train_models", true);

  // One spec seed for every noise level: A and Sigma_X stay fixed while
  // sigma_eps sweeps.
  const std::uint64_t spec_seed = rng::mix64(seed ^ rng::fnv1a64("spec"));

  std::vector<json> cell_summaries(noise_levels.size());
  std::vector<std::vector<std::string>> cell_files(noise_levels.size());

  run_cells(int(noise_levels.size()), threads, [&](int i) {
    const double sigma = noise_levels[size_t(i)];
    const std::string tag = sigma_tag(sigma);
    const std::uint64_t cell_seed = rng::mix64(seed ^ rng::fnv1a64("cell-" + tag));
    const JointGaussianSpec spec =
        parse_spec(spec_section, dim_y, sigma, spec_seed);

    OutputCollector cell{out.dir, {}, json::object()};
    json summary;
    summary["noise_std"] = sigma;
    summary["analytic_mi"] = analytic_mi(spec);
    summary["stot_marginal_closed_form"] =
        total_entropy_closed_form({Eigen::VectorXd::Zero(spec.dim_x), spec.cov_x});
    summary["stot_conditional_closed_form"] = conditional_total_entropy_closed_form(spec);

    const auto cond_field = std::make_shared<AnalyticConditionalScore>(spec, sched);
    const auto marg_field = std::make_shared<AnalyticMarginalScore>(spec, sched);

    EntropyReport stot_marg = total_entropy_path(
        *marg_field, sched, gaussian_data_sampler(spec), n_mc, rng::mix64(cell_seed ^ 1));
    cell.write_report("stot_marginal_analytic_sigma" + tag, stot_marg);
    summary["stot_marginal_mc"] = stot_marg.total;

    EntropyReport stot_cond =
        neural_entropy(*em_from_score_param(cond_field), sched, gaussian_pair_sampler(spec),
                       n_mc, rng::mix64(cell_seed ^ 2));
    cell.write_report("stot_conditional_analytic_sigma" + tag, stot_cond);
    summary["stot_conditional_mc"] = stot_cond.total;

    // Peak location of the analytic conditional entropy-rate curve.
    const std::vector<double> cond_rate = conditional_entropy_rate_curve(spec, sched);
    const auto grid = sched.grid();
    const size_t peak =
        size_t(std::max_element(cond_rate.begin(), cond_rate.end()) - cond_rate.begin());
    summary["conditional_rate_argmax_s"] = grid[peak];

    EntropyReport mi_analytic = minde_mi(*cond_field, *marg_field, sched,
                                         gaussian_pair_sampler(spec), n_mc,
                                         rng::mix64(cell_seed ^ 3));
    cell.write_report("mi_analytic_sigma" + tag, mi_analytic);
    summary["minde_analytic"] = mi_analytic.total;
    summary["minde_analytic_stderr"] = mi_analytic.mc_stderr.back();

    if (train_models) {
      TrainingSetup setup = parse_training(config.at("training"), cell_seed);
      rng::Stream data_stream = rng::named_stream(cell_seed, "train-data");
      const auto [x, y] = sample_pairs(spec, setup.pairs, data_stream);
      const TrainedPair trained = train_pair(x, y, sched, setup, cell_seed);

      EntropyReport snn_cond = neural_entropy(*trained.cond, sched, gaussian_pair_sampler(spec),
                                              n_mc, rng::mix64(cell_seed ^ 4));
      cell.write_report("snn_conditional_sigma" + tag, snn_cond);
      summary["snn_conditional"] = snn_cond.total;

      EntropyReport snn_marg = neural_entropy(*trained.marg, sched, gaussian_data_sampler(spec),
                                              n_mc, rng::mix64(cell_seed ^ 5));
      cell.write_report("snn_marginal_sigma" + tag, snn_marg);
      summary["snn_marginal"] = snn_marg.total;

      EntropyReport mi_trained = minde_mi(*trained.cond, *trained.marg, sched,
                                          gaussian_pair_sampler(spec), n_mc,
                                          rng::mix64(cell_seed ^ 6));
      cell.write_report("mi_trained_sigma" + tag, mi_trained);
      summary["minde_trained"] = mi_trained.total;
      summary["final_loss_conditional"] = trained.final_loss_cond;
      summary["final_loss_marginal"] = trained.final_loss_marg;
    }

    cell_summaries[size_t(i)] = std::move(summary);
    cell_files[size_t(i)] = std::move(cell.files);
  });

  json per_sigma = json::array();
  for (auto& s : cell_summaries) per_sigma.push_back(std::move(s));
  for (auto& files : cell_files)
    out.files.insert(out.files.end(), files.begin(), files.end());
  out.totals["per_sigma"] = per_sigma;
  out.write_json("summary.json", out.totals);
}

void run_cfg_mi(const json& config, OutputCollector& out, std::uint64_t seed, int threads) {
  const DiffusionSchedule sched = parse_schedule(config);
  const json& spec_section = config.at("spec");
  const double noise_std = spec_section.at("noise_std").get<double>();
  const std::vector<int> dim_y_list = config.at("dim_y").get<std::vector<int>>();
  const std::vector<double> weights = config.at("weights").get<std::vector<double>>();
  const long n_mc = config.at("estimation").at("n_mc").get<long>();
  const int ode_steps = config.value("ode_steps", 350);

  struct Cell {
    int dy_index;
    int w_index;
  };
  std::vector<Cell> cells;
  for (int d = 0; d < int(dim_y_list.size()); ++d)
    for (int w = 0; w < int(weights.size()); ++w) cells.push_back({d, w});

  std::vector<json> cell_summaries(cells.size());
  run_cells(int(cells.size()), threads, [&](int i) {
    const int dy = dim_y_list[size_t(cells[size_t(i)].dy_index)];
    const double w = weights[size_t(cells[size_t(i)].w_index)];
    const std::uint64_t cell_seed =
        rng::mix64(seed ^ rng::fnv1a64("cfg-" + std::to_string(dy) + "-" + sigma_tag(w)));
    // A is kept fixed per dim_y while w sweeps.
    const JointGaussianSpec spec = parse_spec(
        spec_section, dy, noise_std, rng::mix64(seed ^ rng::fnv1a64("spec-" + std::to_string(dy))));

    TrainingSetup setup = parse_training(config.at("training"), cell_seed);
    const auto [x, y] = sample_cfg_pairs(spec, sched, w, setup.pairs, ode_steps,
                                         rng::mix64(cell_seed ^ rng::fnv1a64("train-data")));
    const TrainedPair trained = train_pair(x, y, sched, setup, cell_seed);

    // Fresh guided draws for evaluation.
    PairSampler eval_sampler = [&spec, &sched, w, ode_steps](int n, rng::Stream& stream) {
      return sample_cfg_pairs(spec, sched, w, n, ode_steps, stream.next_u64());
    };
    EntropyReport mi = minde_mi(*trained.cond, *trained.marg, sched, eval_sampler, n_mc,
                                rng::mix64(cell_seed ^ rng::fnv1a64("eval")));

    json summary;
    summary["dim_y"] = dy;
    summary["w"] = w;
    summary["mi_estimate"] = mi.total;
    summary["mi_stderr"] = mi.mc_stderr.back();
    summary["analytic_mi_unguided"] = analytic_mi(spec);
    summary["final_loss_conditional"] = trained.final_loss_cond;
    summary["final_loss_marginal"] = trained.final_loss_marg;
    cell_summaries[size_t(i)] = std::move(summary);
  });

  // One MI-vs-w table per dim_y.
  for (int d = 0; d < int(dim_y_list.size()); ++d) {
    std::ostringstream csv;
    csv << "w,mi_estimate,mi_stderr,analytic_mi_unguided\n";
    for (size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].dy_index != d) continue;
      const json& s = cell_summaries[i];
      csv << s["w"].get<double>() << ',' << s["mi_estimate"].get<double>() << ','
          << s["mi_stderr"].get<double>() << ',' << s["analytic_mi_unguided"].get<double>()
          << '\n';
    }
    std::ofstream file(out.path("mi_vs_w_dy" + std::to_string(dim_y_list[size_t(d)]) + ".csv"));
    file << csv.str();
  }

  json table = json::array();
  for (auto& s : cell_summaries) table.push_back(std::move(s));
  out.totals["cells"] = table;
  out.write_json("summary.json", out.totals);
}

void run_kelly(const json& config, OutputCollector& out, std::uint64_t seed) {
  const json& section = config.at("kelly");
  const int n = section.value("n_outcomes", 6);
  const double odds = section.value("odds", double(n));

  Eigen::VectorXd p_true;
  if (!section.contains("p_true") || section.at("p_true") == "fair") {
    p_true = Eigen::VectorXd::Constant(n, 1.0 / double(n));
  } else {
    const auto values = section.at("p_true").get<std::vector<double>>();
    p_true = Eigen::Map<const Eigen::VectorXd>(values.data(), Eigen::Index(values.size()));
  }
  const BettingGame game = make_game(n, odds, p_true, seed);

  std::optional<Channel> channel;
  const json ch = section.value("channel", json("none"));
  if (ch.is_string()) {
    if (ch == "identity") channel = identity_channel(n);
    else if (ch == "uniform") channel = uniform_channel(n);
    else require(ch == "none", "kelly.channel: unknown channel name");
  } else if (ch.is_object() && ch.contains("flip")) {
    channel = symmetric_channel(n, ch.at("flip").get<double>());
  } else if (ch.is_object() && ch.contains("matrix")) {
    const auto rows = ch.at("matrix").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(rows.size(), rows.at(0).size());
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
    channel = make_channel(m);
  }

  const long n_throws = section.value("n_throws", 100000L);
  const double analytic = doubling_rate(game, game.p_true);
  const double gain = channel ? channel_rate_gain(game, *channel) : 0.0;
  const WealthResult sim = simulate_wealth(game, channel, n_throws, seed);

  json result;
  result["analytic_rate"] = analytic;
  result["channel_gain"] = gain;
  result["channel_mi_bits"] = gain;
  result["analytic_rate_with_channel"] = analytic + gain;
  result["simulated_rate"] = sim.rate;
  result["simulated_log2_wealth"] = sim.log2_wealth;
  result["n_throws"] = n_throws;
  out.write_json("kelly.json", result);
  out.totals = result;
}

void run_train(const json& config, OutputCollector& out, std::uint64_t seed) {
  const DiffusionSchedule sched = parse_schedule(config);
  const json& spec_section = config.at("spec");
  const JointGaussianSpec spec =
      parse_spec(spec_section, spec_section.at("dim_y").get<int>(),
                 spec_section.at("noise_std").get<double>(), rng::mix64(seed ^ rng::fnv1a64("spec")));
  TrainingSetup setup = parse_training(config.at("training"), rng::mix64(seed ^ rng::fnv1a64("train")));

  rng::Stream data_stream = rng::named_stream(seed, "train-data");
  const auto [x, y] = sample_pairs(spec, setup.pairs, data_stream);
  const bool conditional = config.value("model", std::string("conditional")) == "conditional";

  setup.cfg.seed = rng::mix64(seed ^ rng::fnv1a64("train"));
  TrainResult res = train_conditional(x, conditional ? y : Eigen::MatrixXd(), sched, setup.cfg,
                                      setup.net);

  const std::string checkpoint = config.value("checkpoint", std::string("model.json"));
  save_checkpoint(res.params, (out.path(checkpoint)).string());

  json manifest;
  manifest["config"] = config;
  manifest["spec"] = spec_to_json(spec);
  manifest["final_loss"] = res.epoch_loss.back();
  manifest["epoch_loss"] = res.epoch_loss;
  manifest["checkpoint"] = checkpoint;
  out.write_json("training_manifest.json", manifest);
  out.totals["final_loss"] = res.epoch_loss.back();
  out.totals["checkpoint"] = checkpoint;
}

void run_estimate(const json& config, OutputCollector& out, std::uint64_t seed) {
  const DiffusionSchedule sched = parse_schedule(config);
  const json& spec_section = config.at("spec");
  const JointGaussianSpec spec =
      parse_spec(spec_section, spec_section.at("dim_y").get<int>(),
                 spec_section.at("noise_std").get<double>(), rng::mix64(seed ^ rng::fnv1a64("spec")));
  const long n_mc = config.at("estimation").at("n_mc").get<long>();
  const std::string estimator = config.at("estimator").get<std::string>();
  const bool learned = config.value("fields", std::string("analytic")) == "learned";

  std::shared_ptr<const ScoreField> cond_field;
  std::shared_ptr<const ScoreField> marg_field;
  if (learned) {
    if (config.contains("checkpoint_cond"))
      cond_field = std::make_shared<LearnedScoreField>(
          load_checkpoint(config.at("checkpoint_cond").get<std::string>()));
    if (config.contains("checkpoint_marg"))
      marg_field = std::make_shared<LearnedScoreField>(
          load_checkpoint(config.at("checkpoint_marg").get<std::string>()));
    require(cond_field || marg_field, "estimate: learned fields need a checkpoint");
    if (!marg_field) marg_field = cond_field;  // label-dropped single network
  } else {
    cond_field = std::make_shared<AnalyticConditionalScore>(spec, sched);
    marg_field = std::make_shared<AnalyticMarginalScore>(spec, sched);
  }

  json summary;
  summary["estimator"] = estimator;
  summary["analytic_mi"] = analytic_mi(spec);
  if (estimator == "minde") {
    EntropyReport mi =
        minde_mi(*cond_field, *marg_field, sched, gaussian_pair_sampler(spec), n_mc, seed);
    out.write_report("mi", mi);
    summary["total"] = mi.total;
    summary["stderr"] = mi.mc_stderr.back();
  } else if (estimator == "total-entropy") {
    EntropyReport r = total_entropy_path(*marg_field, sched, gaussian_data_sampler(spec), n_mc,
                                         seed);
    out.write_report("total_entropy", r);
    summary["total"] = r.total;
    summary["stderr"] = r.mc_stderr.back();
    summary["closed_form"] =
        total_entropy_closed_form({Eigen::VectorXd::Zero(spec.dim_x), spec.cov_x});
  } else if (estimator == "neural-entropy") {
    EntropyReport r = neural_entropy(*em_from_score_param(cond_field), sched,
                                     gaussian_pair_sampler(spec), n_mc, seed);
    out.write_report("neural_entropy", r);
    summary["total"] = r.total;
    summary["stderr"] = r.mc_stderr.back();
    summary["closed_form"] = conditional_total_entropy_closed_form(spec);
  } else if (estimator == "entropy-via-scores") {
    const ScalarEstimate marg = entropy_via_scores(*marg_field, sched,
                                                   gaussian_data_sampler(spec), n_mc, seed);
    const ScalarEstimate cond = conditional_entropy_via_scores(
        *cond_field, sched, gaussian_pair_sampler(spec), n_mc, rng::mix64(seed ^ 11));
    summary["marginal_entropy"] = marg.value;
    summary["marginal_entropy_stderr"] = marg.stderr_;
    summary["conditional_entropy"] = cond.value;
    summary["conditional_entropy_stderr"] = cond.stderr_;
    summary["mi_from_difference"] = marg.value - cond.value;
  } else {
    throw std::invalid_argument("estimate: unknown estimator " + estimator);
  }
  out.write_json("summary.json", summary);
  out.totals = summary;
}

void run_logdensity(const json& config, OutputCollector& out, std::uint64_t seed) {
  const DiffusionSchedule sched = parse_schedule(config);
  const json& section = config.at("logdensity");
  const double sigma_x = section.value("sigma_x", 1.0);
  const int points = section.value("points", 20);
  const double x_max = section.value("x_max", 2.5);
  const long n_mc = config.at("estimation").at("n_mc").get<long>();

  JointGaussianSpec spec = build_joint_spec(1, 1, 1.0, 1e-9, seed);
  spec.cov_x(0, 0) = sigma_x * sigma_x;
  spec.mixing(0, 0) = 0.0;
  const Denoiser denoiser = gaussian_denoiser(spec, sched);

  std::ostringstream csv;
  csv << "x,estimate,stderr,neg_log_p\n";
  std::vector<double> estimates(static_cast<size_t>(points));
  std::vector<double> targets(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double x = points == 1 ? 0.0 : -x_max + 2.0 * x_max * double(i) / double(points - 1);
    Eigen::VectorXd xv(1);
    xv(0) = x;
    // Common random numbers across test points: the x-independent part of the
    // integrand cancels in differences.
    const ScalarEstimate est = log_density_denoised_means(xv, sched, denoiser, n_mc, seed);
    const double neg_log_p =
        0.5 * x * x / (sigma_x * sigma_x) + 0.5 * std::log(2.0 * M_PI * sigma_x * sigma_x);
    estimates[size_t(i)] = est.value;
    targets[size_t(i)] = neg_log_p;
    csv << x << ',' << est.value << ',' << est.stderr_ << ',' << neg_log_p << '\n';
  }
  std::ofstream file(out.path("logdensity.csv"));
  file << csv.str();

  // Least-squares slope of estimate against -log p; 1 means the integral
  // recovers log-density differences exactly.
  const double n = double(points);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < points; ++i) {
    sx += targets[size_t(i)];
    sy += estimates[size_t(i)];
    sxx += targets[size_t(i)] * targets[size_t(i)];
    sxy += targets[size_t(i)] * estimates[size_t(i)];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  out.totals["slope"] = slope;
  out.totals["intercept"] = (sy - slope * sx) / n;
  out.totals["points"] = points;
  out.write_json("summary.json", out.totals);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json config;
  in >> config;
  return config;
}

std::vector<std::string> validate_config(const json& config) {
  FieldChecker c(config);
  if (!config.is_object()) return {"config: expected a JSON object"};

  c.check(
      "experiment",
      [](const json& v) {
        return v.is_string() &&
               std::find(kExperiments.begin(), kExperiments.end(), v.get<std::string>()) !=
                   kExperiments.end();
      },
      "one of gaussian-entropy|cfg-mi|kelly|train|estimate|logdensity");
  if (!c.errors_.empty()) return c.errors_;

  c.check(
      "seed", [](const json& v) { return v.is_number_unsigned() || v.is_number_integer(); },
      "integer seed");
  c.string_field("out_dir");
  c.positive_int("threads", false);
  check_schedule_section(c, "schedule");

  const std::string id = config.at("experiment").get<std::string>();
  if (id == "gaussian-entropy") {
    check_spec_section(c, "spec", true);
    c.positive_int("spec.dim_y");
    c.positive_int("estimation.n_mc");
    if (config.value("train_models", true)) check_training_section(c, "training");
  } else if (id == "cfg-mi") {
    check_spec_section(c, "spec", false);
    c.check(
        "dim_y",
        [](const json& v) {
          if (!v.is_array() || v.empty()) return false;
          for (const auto& e : v)
            if (!e.is_number_integer() || e.get<int>() < 1) return false;
          return true;
        },
        "non-empty array of positive integers");
    c.check(
        "weights",
        [](const json& v) {
          if (!v.is_array() || v.empty()) return false;
          for (const auto& e : v)
            if (!e.is_number() || e.get<double>() < 0.0) return false;
          return true;
        },
        "non-empty array of non-negative reals");
    c.positive_int("estimation.n_mc");
    check_training_section(c, "training");
  } else if (id == "kelly") {
    c.require_present("kelly");
    c.positive_int("kelly.n_throws", false);
  } else if (id == "train") {
    check_spec_section(c, "spec", false);
    c.positive_int("spec.dim_y");
    check_training_section(c, "training");
  } else if (id == "estimate") {
    check_spec_section(c, "spec", false);
    c.positive_int("spec.dim_y");
    c.positive_int("estimation.n_mc");
    c.check(
        "estimator",
        [](const json& v) {
          return v.is_string() && (v == "minde" || v == "total-entropy" ||
                                   v == "neural-entropy" || v == "entropy-via-scores");
        },
        "one of minde|total-entropy|neural-entropy|entropy-via-scores");
  } else if (id == "logdensity") {
    c.positive_int("estimation.n_mc");
    c.require_present("logdensity");
    c.positive_real("logdensity.sigma_x", false);
    c.positive_int("logdensity.points", false);
  }
  return c.errors_;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sha256_file: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void run_experiment(const json& config_in, const RunnerOptions& opts) {
  json config = config_in;
  if (opts.seed_override) config["seed"] = *opts.seed_override;
  if (opts.out_override) config["out_dir"] = *opts.out_override;
  if (opts.threads_override) config["threads"] = *opts.threads_override;

  const auto errors = validate_config(config);
  if (!errors.empty()) {
    std::string joined;
    for (const auto& e : errors) joined += e + "\n";
    throw std::invalid_argument("invalid config:\n" + joined);
  }

  const std::string id = config.at("experiment").get<std::string>();
  const std::uint64_t seed = config.at("seed").get<std::uint64_t>();
  const int threads = config.value("threads", 1);
  const bool reproducible = config.value("reproducible", true);

  OutputCollector out;
  out.dir = fs::path(config.at("out_dir").get<std::string>());
  fs::create_directories(out.dir);

  // Stash any previous manifest for reproducibility verification.
  json previous;
  const fs::path manifest_path = out.dir / "manifest.json";
  if (reproducible && fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    in >> previous;
  }

  if (id == "gaussian-entropy") run_gaussian_entropy(config, out, seed, threads);
  else if (id == "cfg-mi") run_cfg_mi(config, out, seed, threads);
  else if (id == "kelly") run_kelly(config, out, seed);
  else if (id == "train") run_train(config, out, seed);
  else if (id == "estimate") run_estimate(config, out, seed);
  else run_logdensity(config, out, seed);

  json manifest;
  manifest["experiment"] = id;
  manifest["config"] = config;
  manifest["totals"] = out.totals;
  json files = json::array();
  std::sort(out.files.begin(), out.files.end());
  for (const auto& name : out.files) {
    json f;
    f["path"] = name;
    f["sha256"] = sha256_file((out.dir / name).string());
    files.push_back(f);
  }
  manifest["outputs"] = files;
  {
    std::ofstream m(manifest_path);
    m << manifest.dump(2) << '\n';
  }

  if (reproducible && previous.is_object() && previous.contains("outputs") &&
      previous["config"] == manifest["config"]) {
    std::map<std::string, std::string> old_hashes;
    for (const auto& f : previous["outputs"])
      old_hashes[f.at("path").get<std::string>()] = f.at("sha256").get<std::string>();
    for (const auto& f : manifest["outputs"]) {
      const auto it = old_hashes.find(f.at("path").get<std::string>());
      if (it != old_hashes.end() && it->second != f.at("sha256").get<std::string>())
        throw NumericalError("reproducibility check failed for " +
                             f.at("path").get<std::string>());
    }
  }
}

std::string report_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("report: cannot open " + manifest_path);
  json manifest;
  in >> manifest;

  std::ostringstream text;
  text << "experiment: " << manifest.value("experiment", std::string("?")) << "\n";
  text << "totals:\n";
  std::function<void(const json&, int)> render = [&](const json& node, int indent) {
    const std::string pad(size_t(indent), ' ');
    if (node.is_object()) {
      for (const auto& [key, value] : node.items()) {
        if (value.is_object() || value.is_array()) {
          text << pad << key << ":\n";
          render(value, indent + 2);
        } else {
          text << pad << key << ": " << value.dump() << "\n";
        }
      }
    } else if (node.is_array()) {
      for (const auto& value : node) {
        text << pad << "-\n";
        render(value, indent + 2);
      }
    } else {
      text << pad << node.dump() << "\n";
    }
  };
  render(manifest.value("totals", json::object()), 2);
  text << "outputs: " << manifest.value("outputs", json::array()).size() << " file(s)\n";
  return text.str();
}

}  // namespace diffinfo::runner

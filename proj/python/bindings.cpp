#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diffinfo/estimators.hpp"
#include "diffinfo/kelly.hpp"
#include "diffinfo/samplers.hpp"
#include "diffinfo/training.hpp"

namespace py = pybind11;
using namespace diffinfo;

namespace {

// numpy convention at the boundary: rows are samples.
Eigen::MatrixXd to_cols(const Eigen::MatrixXd& rows) { return rows.transpose(); }
Eigen::MatrixXd to_rows(const Eigen::MatrixXd& cols) { return cols.transpose(); }

Eigen::MatrixXd cond_matrix(const std::optional<Eigen::MatrixXd>& cond) {
  if (!cond) return Eigen::MatrixXd();
  if (cond->cols() == 1) return *cond;  // a single condition vector
  return to_cols(*cond);
}

py::dict report_to_dict(const EntropyReport& r) {
  py::dict d;
  d["times"] = r.times;
  d["rate"] = r.rate;
  d["cumulative"] = r.cumulative;
  d["stderr"] = r.mc_stderr;
  d["total"] = r.total;
  d["estimator"] = r.meta.estimator;
  d["fields"] = r.meta.fields;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Information flow in diffusion generative processes";

  // ----- gaussian model -----
  py::class_<JointGaussianSpec>(m, "JointGaussianSpec")
      .def_readonly("dim_x", &JointGaussianSpec::dim_x)
      .def_readonly("dim_y", &JointGaussianSpec::dim_y)
      .def_readonly("mixing", &JointGaussianSpec::mixing)
      .def_readonly("cov_x", &JointGaussianSpec::cov_x)
      .def_readonly("noise_std", &JointGaussianSpec::noise_std)
      .def_readonly("jitter", &JointGaussianSpec::jitter)
      .def_readonly("seed", &JointGaussianSpec::seed)
      .def("__repr__", [](const JointGaussianSpec& s) {
        return "JointGaussianSpec(dim_x=" + std::to_string(s.dim_x) +
               ", dim_y=" + std::to_string(s.dim_y) + ")";
      });

  m.def("build_joint_spec", &build_joint_spec, py::arg("dim_x"), py::arg("dim_y"),
        py::arg("noise_std"), py::arg("jitter") = 1e-6, py::arg("seed") = 0);
  m.def("spec_to_json",
        [](const JointGaussianSpec& s, bool embed) { return spec_to_json(s, embed).dump(); },
        py::arg("spec"), py::arg("embed_matrices") = false);
  m.def("spec_from_json",
        [](const std::string& text) { return spec_from_json(nlohmann::json::parse(text)); });
  m.def("joint_covariance", &joint_covariance);
  m.def("conditional_x_given_y",
        [](const JointGaussianSpec& spec, const Eigen::VectorXd& y) {
          const GaussianDist d = conditional_x_given_y(spec, y);
          return py::make_tuple(d.mean, d.cov);
        });
  m.def("analytic_mi", &analytic_mi);
  m.def("mi_1d", &mi_1d, py::arg("a"), py::arg("sigma_x"), py::arg("sigma_eps"));
  m.def("sample_pairs",
        [](const JointGaussianSpec& spec, int n, std::uint64_t seed) {
          auto [x, y] = sample_pairs(spec, n, seed);
          return py::make_tuple(to_rows(x), to_rows(y));
        },
        py::arg("spec"), py::arg("n"), py::arg("seed") = 0);
  m.def("gaussian_kl",
        [](const Eigen::VectorXd& mp, const Eigen::MatrixXd& cp, const Eigen::VectorXd& mq,
           const Eigen::MatrixXd& cq) { return gaussian_kl({mp, cp}, {mq, cq}); },
        py::arg("mean_p"), py::arg("cov_p"), py::arg("mean_q"), py::arg("cov_q"));
  m.def("total_correlation_gaussian", &total_correlation_gaussian);

  // ----- diffusion process -----
  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_readonly("beta_min", &DiffusionSchedule::beta_min)
      .def_readonly("beta_max", &DiffusionSchedule::beta_max)
      .def_readonly("horizon", &DiffusionSchedule::horizon)
      .def_readonly("steps", &DiffusionSchedule::steps)
      .def_readonly("eps_time", &DiffusionSchedule::eps_time)
      .def("beta", &DiffusionSchedule::beta)
      .def("alpha", &DiffusionSchedule::alpha)
      .def("s_cutoff", &DiffusionSchedule::s_cutoff)
      .def("grid", &DiffusionSchedule::grid);

  m.def("vp_schedule", &vp_schedule, py::arg("beta_min") = 0.1, py::arg("beta_max") = 20.0,
        py::arg("horizon") = 1.0, py::arg("steps") = 1000, py::arg("eps_time") = 1e-3);
  m.def("kernel_params", [](const DiffusionSchedule& sched, double s) {
    const KernelParams k = kernel_params(sched, s);
    return py::make_tuple(k.mu, k.sigma2);
  });
  m.def("forward_jump_sample",
        [](const DiffusionSchedule& sched, const Eigen::VectorXd& x, double s,
           std::uint64_t seed) {
          rng::Stream stream = rng::named_stream(seed, "jump");
          return forward_jump_sample(sched, x, s, stream);
        },
        py::arg("sched"), py::arg("x"), py::arg("s"), py::arg("seed") = 0);
  m.def("denoised_mean_gaussian", &denoised_mean_gaussian);
  m.def("quasi_invariant_logpdf", &quasi_invariant_logpdf);
  m.def("quasi_invariant_score", &quasi_invariant_score);

  // ----- score fields -----
  py::class_<ScoreField, std::shared_ptr<ScoreField>>(m, "ScoreField")
      .def_property_readonly("dim", &ScoreField::dim)
      .def_property_readonly("tag", [](const ScoreField& f) { return std::string(f.tag()); })
      .def("score",
           [](const ScoreField& f, const Eigen::MatrixXd& x, double s,
              const std::optional<Eigen::MatrixXd>& cond) {
             return to_rows(f.score(to_cols(x), s, cond_matrix(cond)));
           },
           py::arg("x"), py::arg("s"), py::arg("cond") = std::nullopt)
      .def("epsilon",
           [](const ScoreField& f, const Eigen::MatrixXd& x, double s,
              const std::optional<Eigen::MatrixXd>& cond) {
             return to_rows(f.epsilon(to_cols(x), s, cond_matrix(cond)));
           },
           py::arg("x"), py::arg("s"), py::arg("cond") = std::nullopt);

  m.def("analytic_conditional_field",
        [](const JointGaussianSpec& spec, const DiffusionSchedule& sched) {
          return std::shared_ptr<ScoreField>(new AnalyticConditionalScore(spec, sched));
        });
  m.def("analytic_marginal_field",
        [](const JointGaussianSpec& spec, const DiffusionSchedule& sched) {
          return std::shared_ptr<ScoreField>(new AnalyticMarginalScore(spec, sched));
        });
  m.def("analytic_joint_field",
        [](const JointGaussianSpec& spec, const DiffusionSchedule& sched) {
          return std::shared_ptr<ScoreField>(new AnalyticJointScore(spec, sched));
        });
  m.def("cfg_combined_field",
        [](std::shared_ptr<ScoreField> cond, std::shared_ptr<ScoreField> marg, double w) {
          return std::shared_ptr<ScoreField>(new CfgCombinedScore(cond, marg, w));
        });
  m.def("learned_field", [](const std::string& checkpoint_path) {
    return std::shared_ptr<ScoreField>(new LearnedScoreField(load_checkpoint(checkpoint_path)));
  });

  // ----- samplers -----
  m.def("reverse_sde",
        [](std::shared_ptr<ScoreField> field, const DiffusionSchedule& sched, int n, int steps,
           std::uint64_t seed, const std::optional<Eigen::VectorXd>& condition) {
          SamplerConfig cfg;
          cfg.steps = steps;
          cfg.seed = seed;
          cfg.mode = SamplerConfig::Mode::kSde;
          return to_rows(reverse_sde_em(*field, sched, n, cfg, condition));
        },
        py::arg("field"), py::arg("sched"), py::arg("n"), py::arg("steps") = 1000,
        py::arg("seed") = 0, py::arg("condition") = std::nullopt);
  m.def("pf_ode_cfg",
        [](std::shared_ptr<ScoreField> cond, std::shared_ptr<ScoreField> marg,
           const Eigen::VectorXd& y, const DiffusionSchedule& sched, double w, int n, int steps,
           std::uint64_t seed) {
          SamplerConfig cfg;
          cfg.steps = steps;
          cfg.cfg_weight = w;
          cfg.seed = seed;
          cfg.mode = SamplerConfig::Mode::kOde;
          return to_rows(pf_ode_cfg(*cond, *marg, y, sched, cfg, n));
        },
        py::arg("cond_field"), py::arg("marg_field"), py::arg("y"), py::arg("sched"),
        py::arg("w") = 0.0, py::arg("n") = 1, py::arg("steps") = 1000, py::arg("seed") = 0);
  m.def("sample_cfg_pairs",
        [](const JointGaussianSpec& spec, const DiffusionSchedule& sched, double w, int n,
           int ode_steps, std::uint64_t seed) {
          auto [x, y] = sample_cfg_pairs(spec, sched, w, n, ode_steps, seed);
          return py::make_tuple(to_rows(x), to_rows(y));
        },
        py::arg("spec"), py::arg("sched"), py::arg("w"), py::arg("n"), py::arg("ode_steps") = 350,
        py::arg("seed") = 0);

  // ----- training -----
  m.def("train_conditional",
        [](const Eigen::MatrixXd& x_rows, const std::optional<Eigen::MatrixXd>& y_rows,
           const DiffusionSchedule& sched, int batch_size, int epochs,
           const std::string& weighting, double label_drop_prob, double lr,
           const std::vector<int>& hidden, std::uint64_t seed) {
          TrainingConfig cfg;
          cfg.batch_size = batch_size;
          cfg.epochs = epochs;
          cfg.weighting = weighting == "unit" ? Weighting::kUnit : Weighting::kHalfSigmaSq;
          cfg.label_drop_prob = label_drop_prob;
          cfg.learning_rate = lr;
          cfg.seed = seed;
          NetConfig net;
          net.hidden = hidden;
          TrainResult res = train_conditional(
              to_cols(x_rows), y_rows ? to_cols(*y_rows) : Eigen::MatrixXd(), sched, cfg, net);
          py::dict out;
          out["field"] = py::cast(score_from_entropy_param(res.params));
          out["epoch_loss"] = res.epoch_loss;
          out["checkpoint_json"] = checkpoint_to_json(res.params).dump();
          return out;
        },
        py::arg("x"), py::arg("y") = std::nullopt, py::arg("sched") = default_vp_schedule(),
        py::arg("batch_size") = 128, py::arg("epochs") = 50,
        py::arg("weighting") = "half-sigma-squared", py::arg("label_drop_prob") = 0.1,
        py::arg("lr") = 1e-3, py::arg("hidden") = std::vector<int>{256, 256, 256},
        py::arg("seed") = 0);

  // ----- estimators (Gaussian-model samplers) -----
  m.def("total_entropy_path",
        [](std::shared_ptr<ScoreField> field, const DiffusionSchedule& sched,
           const JointGaussianSpec& spec, long n_mc, std::uint64_t seed) {
          return report_to_dict(
              total_entropy_path(*field, sched, gaussian_data_sampler(spec), n_mc, seed));
        },
        py::arg("field"), py::arg("sched"), py::arg("spec"), py::arg("n_mc"), py::arg("seed") = 0);
  m.def("total_entropy_closed_form",
        [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
          return total_entropy_closed_form({mean, cov});
        });
  m.def("conditional_total_entropy_closed_form", &conditional_total_entropy_closed_form);
  m.def("neural_entropy",
        [](std::shared_ptr<ScoreField> field, const DiffusionSchedule& sched,
           const JointGaussianSpec& spec, long n_mc, std::uint64_t seed, bool conditional) {
          if (conditional)
            return report_to_dict(
                neural_entropy(*field, sched, gaussian_pair_sampler(spec), n_mc, seed));
          return report_to_dict(
              neural_entropy(*field, sched, gaussian_data_sampler(spec), n_mc, seed));
        },
        py::arg("field"), py::arg("sched"), py::arg("spec"), py::arg("n_mc"), py::arg("seed") = 0,
        py::arg("conditional") = true);
  m.def("minde_mi",
        [](std::shared_ptr<ScoreField> cond, std::shared_ptr<ScoreField> marg,
           const DiffusionSchedule& sched, const JointGaussianSpec& spec, long n_mc,
           std::uint64_t seed) {
          return report_to_dict(
              minde_mi(*cond, *marg, sched, gaussian_pair_sampler(spec), n_mc, seed));
        },
        py::arg("cond_field"), py::arg("marg_field"), py::arg("sched"), py::arg("spec"),
        py::arg("n_mc"), py::arg("seed") = 0);
  m.def("entropy_via_scores",
        [](std::shared_ptr<ScoreField> field, const DiffusionSchedule& sched,
           const JointGaussianSpec& spec, long n_mc, std::uint64_t seed) {
          const ScalarEstimate e =
              entropy_via_scores(*field, sched, gaussian_data_sampler(spec), n_mc, seed);
          return py::make_tuple(e.value, e.stderr_);
        },
        py::arg("field"), py::arg("sched"), py::arg("spec"), py::arg("n_mc"), py::arg("seed") = 0);
  m.def("factorized_entropy_report", [](const JointGaussianSpec& spec) {
    const FactorizedEntropy f = factorized_entropy_report(spec);
    py::dict d;
    d["marginal_kls"] = f.marginal_kls;
    d["tc"] = f.tc;
    d["total"] = f.total;
    return d;
  });
  m.def("log_density_denoised_means",
        [](const Eigen::VectorXd& x, const DiffusionSchedule& sched,
           const JointGaussianSpec& spec, long n_mc, std::uint64_t seed) {
          const ScalarEstimate e =
              log_density_denoised_means(x, sched, gaussian_denoiser(spec, sched), n_mc, seed);
          return py::make_tuple(e.value, e.stderr_);
        },
        py::arg("x"), py::arg("sched"), py::arg("spec"), py::arg("n_mc"), py::arg("seed") = 0);
  m.def("marginal_entropy_rate_curve", &marginal_entropy_rate_curve);
  m.def("conditional_entropy_rate_curve", &conditional_entropy_rate_curve);

  // ----- kelly -----
  m.def("doubling_rate",
        [](const Eigen::VectorXd& p_true, const Eigen::VectorXd& p_bet, double odds) {
          return doubling_rate(make_game(int(p_true.size()), odds, p_true, 0), p_bet);
        },
        py::arg("p_true"), py::arg("p_bet"), py::arg("odds"));
  m.def("channel_rate_gain",
        [](const Eigen::VectorXd& p_true, double odds, const Eigen::MatrixXd& confusion) {
          return channel_rate_gain(make_game(int(p_true.size()), odds, p_true, 0),
                                   make_channel(confusion));
        },
        py::arg("p_true"), py::arg("odds"), py::arg("confusion"));
  m.def("simulate_wealth",
        [](const Eigen::VectorXd& p_true, double odds,
           const std::optional<Eigen::MatrixXd>& confusion, long n_throws, std::uint64_t seed) {
          std::optional<Channel> channel;
          if (confusion) channel = make_channel(*confusion);
          const WealthResult r =
              simulate_wealth(make_game(int(p_true.size()), odds, p_true, seed), channel,
                              n_throws, seed);
          return py::make_tuple(r.log2_wealth, r.rate);
        },
        py::arg("p_true"), py::arg("odds"), py::arg("confusion") = std::nullopt,
        py::arg("n_throws") = 100000, py::arg("seed") = 0);
}

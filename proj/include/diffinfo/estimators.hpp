#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffinfo/diffusion.hpp"
#include "diffinfo/gaussian_model.hpp"
#include "diffinfo/score_field.hpp"

namespace diffinfo {

struct ReportMeta {
  std::string estimator;
  long n_mc = 0;
  std::uint64_t seed = 0;
  std::string fields;  // provenance tags of the fields involved
  nlohmann::json extra = nlohmann::json::object();
};

/// Time-indexed curve of an information functional: integrand per grid time,
/// the running trapezoid integral, and the per-time MC standard error
/// propagated through the quadrature weights.
struct EntropyReport {
  std::vector<double> times;
  std::vector<double> rate;        // integrand, nats per unit time
  std::vector<double> cumulative;  // running integral, nats
  std::vector<double> mc_stderr;   // standard error of `cumulative`
  double total = 0.0;              // cumulative.back()
  ReportMeta meta;
};

void write_report_csv(const EntropyReport& report, const std::string& path);
void write_report_meta(const EntropyReport& report, const std::string& path);

struct ScalarEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

using DataSampler = std::function<Eigen::MatrixXd(int, rng::Stream&)>;
using PairSampler = std::function<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>(int, rng::Stream&)>;
/// Denoised-mean evaluator: E[x | x_s] for each column of x_s.
using Denoiser = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

DataSampler gaussian_data_sampler(const JointGaussianSpec& spec);
DataSampler gaussian_dist_sampler(const GaussianDist& dist);
PairSampler gaussian_pair_sampler(const JointGaussianSpec& spec);

Denoiser denoiser_from_field(std::shared_ptr<const ScoreField> field,
                             const DiffusionSchedule& sched);
Denoiser gaussian_denoiser(const JointGaussianSpec& spec, const DiffusionSchedule& sched);

/// Total entropy produced by the forward process (Monte Carlo):
/// int (sigma^2/2) E|| grad log p_eq - grad log p ||^2 over forward-jumped
/// data, with `field` evaluating the interpolating density's score.
EntropyReport total_entropy_path(const ScoreField& field, const DiffusionSchedule& sched,
                                 const DataSampler& data, long n_mc, std::uint64_t seed);

/// Exact KL(data || N(0, I)) of a Gaussian data distribution.
double total_entropy_closed_form(const GaussianDist& data);
/// E_Y[ KL(P(x|y) || N(0, I)) ] of the joint-Gaussian model, in closed form.
double conditional_total_entropy_closed_form(const JointGaussianSpec& spec);

/// Neural entropy int (sigma^2/2) E||eps(x_s, s[, y])||^2 of an
/// epsilon-parameterized field. The conditional overload forward-jumps x
/// conditionally on its own y.
EntropyReport neural_entropy(const ScoreField& field, const DiffusionSchedule& sched,
                             const DataSampler& data, long n_mc, std::uint64_t seed);
EntropyReport neural_entropy(const ScoreField& field, const DiffusionSchedule& sched,
                             const PairSampler& pairs, long n_mc, std::uint64_t seed);

/// MINDE mutual information: E_Y int (sigma^2/2) E|| score_cond - score_marg ||^2.
/// The same forward jump is reused for both fields (common random numbers).
/// When both fields are natively epsilon-parameterized the integrand uses the
/// epsilon difference, so the equilibrium terms cancel algebraically.
EntropyReport minde_mi(const ScoreField& cond_field, const ScoreField& marg_field,
                       const DiffusionSchedule& sched, const PairSampler& pairs, long n_mc,
                       std::uint64_t seed);

struct HutchinsonOptions {
  int probes = 16;     // Rademacher probes per sample
  double step = 1e-4;  // central-difference step
};

/// Differential entropy of the data distribution via the entropy-via-scores
/// identity; the score divergence is exact for analytic fields and estimated
/// with randomized (Hutchinson) finite differences otherwise.
ScalarEstimate entropy_via_scores(const ScoreField& marg_field, const DiffusionSchedule& sched,
                                  const DataSampler& data, long n_mc, std::uint64_t seed,
                                  const HutchinsonOptions& hutchinson = {});
/// Conditional analogue S(X|Y), averaging over pairs.
ScalarEstimate conditional_entropy_via_scores(const ScoreField& cond_field,
                                              const DiffusionSchedule& sched,
                                              const PairSampler& pairs, long n_mc,
                                              std::uint64_t seed,
                                              const HutchinsonOptions& hutchinson = {});

struct FactorizedEntropy {
  std::vector<double> marginal_kls;
  double tc = 0.0;     // total correlation
  double total = 0.0;  // KL(P_d || N(0, I)) = sum marginal_kls + tc
};

FactorizedEntropy factorized_entropy_report(const JointGaussianSpec& spec);

/// Per-point negative log-density up to an additive constant, via the
/// denoised-mean integral int B(s) E|| xhat(x_s) - x ||^2 ds with
/// B(s) = (sigma^2/2) mu^2 / Sigma^2.
ScalarEstimate log_density_denoised_means(const Eigen::VectorXd& x,
                                          const DiffusionSchedule& sched, const Denoiser& denoiser,
                                          long n_mc, std::uint64_t seed);

/// Closed-form entropy-rate curves of the joint-Gaussian model on the
/// schedule grid; the analytically recomputed targets for every
/// schedule-dependent check.
std::vector<double> marginal_entropy_rate_curve(const JointGaussianSpec& spec,
                                                const DiffusionSchedule& sched);
std::vector<double> conditional_entropy_rate_curve(const JointGaussianSpec& spec,
                                                   const DiffusionSchedule& sched);

}  // namespace diffinfo

#include "diffinfo/kelly.hpp"

#include <cmath>
#include <limits>

#include "diffinfo/common.hpp"

namespace diffinfo {

namespace {

constexpr double kDistTol = 1e-12;

void check_distribution(const Eigen::VectorXd& p, const char* what) {
  require(p.size() >= 1, std::string(what) + ": empty distribution");
  require(p.minCoeff() >= 0.0, std::string(what) + ": negative probability");
  require(std::abs(p.sum() - 1.0) <= kDistTol, std::string(what) + ": probabilities must sum to 1");
}

double log2_safe(double x) { return std::log2(x); }

// Entropy in bits with the 0 log 0 = 0 convention.
double entropy_bits(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * log2_safe(p(i));
  return h;
}

int draw_categorical(const Eigen::VectorXd& p, rng::Stream& stream) {
  const double u = stream.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return int(i);
  }
  return int(p.size() - 1);
}

}  // namespace

BettingGame make_game(int n_outcomes, double odds, const Eigen::VectorXd& p_true,
                      std::uint64_t seed) {
  require(n_outcomes >= 2, "make_game: need at least two outcomes");
  require(odds > 0.0, "make_game: odds must be > 0");
  require(p_true.size() == n_outcomes, "make_game: p_true has wrong length");
  check_distribution(p_true, "make_game: p_true");
  return {n_outcomes, odds, p_true, seed};
}

BettingGame fair_game(int n_outcomes, double odds, std::uint64_t seed) {
  return make_game(n_outcomes, odds,
                   Eigen::VectorXd::Constant(n_outcomes, 1.0 / double(n_outcomes)), seed);
}

Channel make_channel(const Eigen::MatrixXd& confusion) {
  require(confusion.rows() >= 1 && confusion.cols() >= 1, "make_channel: empty matrix");
  require(confusion.minCoeff() >= 0.0, "make_channel: negative entry");
  for (Eigen::Index i = 0; i < confusion.rows(); ++i)
    require(std::abs(confusion.row(i).sum() - 1.0) <= kDistTol,
            "make_channel: rows must sum to 1");
  return {confusion};
}

Channel identity_channel(int n) { return make_channel(Eigen::MatrixXd::Identity(n, n)); }

Channel uniform_channel(int n) {
  return make_channel(Eigen::MatrixXd::Constant(n, n, 1.0 / double(n)));
}

Channel symmetric_channel(int n, double flip) {
  require(n >= 2, "symmetric_channel: need at least two outcomes");
  require(flip >= 0.0 && flip <= 1.0, "symmetric_channel: flip outside [0, 1]");
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, n, flip / double(n - 1));
  m.diagonal().setConstant(1.0 - flip);
  return make_channel(m);
}

double doubling_rate(const BettingGame& game, const Eigen::VectorXd& p_bet) {
  require(p_bet.size() == game.n_outcomes, "doubling_rate: p_bet has wrong length");
  check_distribution(p_bet, "doubling_rate: p_bet");
  double rate = 0.0;
  for (int i = 0; i < game.n_outcomes; ++i) {
    if (game.p_true(i) == 0.0) continue;
    if (p_bet(i) == 0.0) return -std::numeric_limits<double>::infinity();
    rate += game.p_true(i) * log2_safe(game.odds * p_bet(i));
  }
  return rate;
}

double channel_rate_gain(const BettingGame& game, const Channel& channel) {
  require(channel.confusion.rows() == game.n_outcomes,
          "channel_rate_gain: channel does not match game outcomes");
  // Joint p(x, y) = p_true(x) P(y|x); the gain is H(X) - H(X|Y), the
  // difference of optimal doubling rates with and without side information.
  const Eigen::MatrixXd joint = game.p_true.asDiagonal() * channel.confusion;
  const Eigen::VectorXd p_y = joint.colwise().sum();
  double cond_entropy = 0.0;
  for (Eigen::Index y = 0; y < joint.cols(); ++y) {
    if (p_y(y) == 0.0) continue;
    for (Eigen::Index x = 0; x < joint.rows(); ++x)
      if (joint(x, y) > 0.0) cond_entropy -= joint(x, y) * log2_safe(joint(x, y) / p_y(y));
  }
  return entropy_bits(game.p_true) - cond_entropy;
}

WealthResult simulate_wealth(const BettingGame& game, const std::optional<Channel>& channel,
                             long n_throws, std::uint64_t seed) {
  require(n_throws >= 1, "simulate_wealth: n_throws must be >= 1");

  // Posterior betting table p(x|y), one column per channel output.
  Eigen::MatrixXd posterior;
  if (channel) {
    require(channel->confusion.rows() == game.n_outcomes,
            "simulate_wealth: channel does not match game outcomes");
    const Eigen::MatrixXd joint = game.p_true.asDiagonal() * channel->confusion;
    const Eigen::VectorXd p_y = joint.colwise().sum();
    posterior.resize(game.n_outcomes, joint.cols());
    for (Eigen::Index y = 0; y < joint.cols(); ++y)
      posterior.col(y) = p_y(y) > 0.0 ? Eigen::VectorXd(joint.col(y) / p_y(y)) : game.p_true;
  }

  rng::Stream stream = rng::named_stream(seed, "kelly-sim");
  double log2_wealth = 0.0;
  for (long t = 0; t < n_throws; ++t) {
    const int x = draw_categorical(game.p_true, stream);
    double bet;
    if (channel) {
      const int y = draw_categorical(channel->confusion.row(x).transpose(), stream);
      bet = posterior(x, y);
    } else {
      bet = game.p_true(x);
    }
    log2_wealth += log2_safe(game.odds * bet);
  }
  return {log2_wealth, log2_wealth / double(n_throws)};
}

}  // namespace diffinfo

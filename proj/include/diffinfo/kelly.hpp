#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "diffinfo/rng.hpp"

namespace diffinfo {

/// The dice betting game: a dealer offering `odds`-for-1 on every outcome,
/// while the true outcome distribution is p_true.
struct BettingGame {
  int n_outcomes = 6;
  double odds = 6.0;             // payout-for-1
  Eigen::VectorXd p_true;        // outcome distribution
  std::uint64_t seed = 0;
};

BettingGame make_game(int n_outcomes, double odds, const Eigen::VectorXd& p_true,
                      std::uint64_t seed);
BettingGame fair_game(int n_outcomes = 6, double odds = 6.0, std::uint64_t seed = 0);

/// Side-information channel: row x holds P(y | x).
struct Channel {
  Eigen::MatrixXd confusion;
};

Channel make_channel(const Eigen::MatrixXd& confusion);
Channel identity_channel(int n);
Channel uniform_channel(int n);
/// Symmetric channel: transmits correctly with probability 1 - flip, spreads
/// flip uniformly over the other outcomes.
Channel symmetric_channel(int n, double flip);

/// Expected log2 wealth growth per throw under proportional betting p_bet:
/// E_p_true[log2(odds * p_bet(x))]. Maximized at p_bet = p_true (the Kelly
/// criterion). Returns -infinity when p_bet puts zero mass on a possible
/// outcome.
double doubling_rate(const BettingGame& game, const Eigen::VectorXd& p_bet);

/// Increase in optimal doubling rate from the channel: H(X) - H(X|Y) = I(X;Y)
/// in bits per throw.
double channel_rate_gain(const BettingGame& game, const Channel& channel);

struct WealthResult {
  double log2_wealth = 0.0;
  double rate = 0.0;  // log2_wealth / n_throws
};

/// Sequential proportional betting with bets p(x|y) (or p_true without a
/// channel). All accounting is in log2-space.
WealthResult simulate_wealth(const BettingGame& game, const std::optional<Channel>& channel,
                             long n_throws, std::uint64_t seed);

}  // namespace diffinfo

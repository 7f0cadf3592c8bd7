#include "diffinfo/rng.hpp"

#include <cmath>

namespace diffinfo::rng {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t(kM0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(kM1) * ctr[2];
    const std::array<std::uint32_t, 4> next = {
        std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0],
        std::uint32_t(p1),
        std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
        std::uint32_t(p0),
    };
    ctr = next;
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

Stream::Stream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), id_(stream_id) {
  const std::uint64_t k = mix64(mix64(seed) ^ mix64(stream_id));
  key_ = {std::uint32_t(k), std::uint32_t(k >> 32)};
}

Stream Stream::child(std::uint64_t index) const {
  return Stream(seed_, mix64(id_ ^ mix64(0x517cc1b727220a95ULL + index)));
}

Stream Stream::child(std::string_view name) const {
  return Stream(seed_, mix64(id_ ^ fnv1a64(name)));
}

std::uint32_t Stream::next_u32() {
  if (block_pos_ == 4) {
    const std::array<std::uint32_t, 4> ctr = {std::uint32_t(counter_),
                                              std::uint32_t(counter_ >> 32), 0, 0};
    block_ = philox4x32(ctr, key_);
    ++counter_;
    block_pos_ = 0;
  }
  return block_[block_pos_++];
}

std::uint64_t Stream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return lo | (hi << 32);
}

double Stream::uniform() {
  // 53-bit mantissa, offset by half an ulp so the result is never 0 or 1.
  return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

std::uint64_t Stream::uniform_below(std::uint64_t n) {
  // Rejection sampling over the top range to avoid modulo bias.
  const std::uint64_t limit = n * ((~std::uint64_t(0)) / n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

void Stream::fill_normal(Eigen::Ref<Eigen::MatrixXd> out) {
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal();
}

Eigen::MatrixXd Stream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  fill_normal(m);
  return m;
}

Eigen::VectorXd Stream::normal_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

Stream named_stream(std::uint64_t seed, std::string_view name) {
  return Stream(seed, fnv1a64(name));
}

}  // namespace diffinfo::rng

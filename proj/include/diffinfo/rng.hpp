#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace diffinfo::rng {

// Counter-based random streams for reproducible Monte Carlo. A Stream is
// identified by (seed, stream id); child streams can be split off without
// coordination, so parallel runs produce the same numbers regardless of
// scheduling. The block generator is Philox4x32-10 (Salmon et al. 2011).

std::uint64_t mix64(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view s);

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

class Stream {
 public:
  Stream() : Stream(0, 0) {}
  Stream(std::uint64_t seed, std::uint64_t stream_id);

  /// Independent derived stream; safe to use concurrently with the parent.
  Stream child(std::uint64_t index) const;
  Stream child(std::string_view name) const;

  std::uint64_t next_u64();
  std::uint32_t next_u32();
  double uniform();  // strictly inside (0, 1)
  double normal();   // N(0, 1), Marsaglia polar method
  std::uint64_t uniform_below(std::uint64_t n);

  void fill_normal(Eigen::Ref<Eigen::MatrixXd> out);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::VectorXd normal_vector(Eigen::Index n);

  std::uint64_t id() const { return id_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t id_ = 0;
  std::array<std::uint32_t, 2> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Stream master_stream(std::uint64_t seed) { return Stream(seed, 0); }
Stream named_stream(std::uint64_t seed, std::string_view name);

}  // namespace diffinfo::rng

#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace stochsol {

// Philox4x32-10 keyed by the master seed; the 128-bit counter holds
// (stream id, block index). Every variate is a pure function of
// (seed, stream, position), so streams can be handed to any thread.
class RngStream {
 public:
  using result_type = std::uint32_t;

  RngStream(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // 53-bit uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 finalizer over (seed, tag); used to give sub-experiments
// their own master seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace stochsol

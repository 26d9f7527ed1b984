#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>

#include "da/numerics.hpp"

namespace da {

/// Counter-based random stream (Philox4x32-10).
///
/// The 64-bit seed is the Philox key and the stream id occupies the upper half
/// of the 128-bit counter, so any (seed, stream id) pair addresses its own
/// sequence and no state is shared between streams. Owned by one worker at a
/// time.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double standard_normal();

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  std::size_t next_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// n i.i.d. N(0,1) draws; throws for n = 0.
Vector standard_normal_vector(RngStream& rng, std::size_t n);

/// Mixes a list of integers into a stream id. Order matters.
std::uint64_t derive_stream_id(std::initializer_list<std::uint64_t> keys);

}  // namespace da

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rlab::num {

/// Philox4x32-10 block function (Salmon et al., Random123). Pure function
/// of (counter, key); exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// 64-bit FNV-1a, used to fold purpose labels into the Philox counter.
std::uint64_t fnv1a64(std::string_view text);

/// Counter-based random stream.
///
/// Block `i` of a stream is philox4x32(counter = {i_lo, i_hi, h_lo, h_hi},
/// key = {seed_lo, seed_hi}) where h = fnv1a64(purpose). Nothing depends on
/// the C++ standard library's engines or distributions, so a given
/// (seed, purpose, draw index) produces the same bits on every platform.
///
/// Uniforms: 53 bits from one 64-bit half of a block, u = (x + 0.5) / 2^53,
/// always in the open interval (0, 1).
/// Normals: Box-Muller on the two uniforms of one block, r = sqrt(-2 ln u1),
/// z0 = r cos(2 pi u2), z1 = r sin(2 pi u2); z0 is returned first, z1 next.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string purpose);

  /// Independent child stream labelled "<purpose>/<label>", starting at
  /// draw 0. Deriving never advances the parent.
  RngStream derive(std::string_view label) const;
  RngStream derive(std::string_view label, std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  const std::string& purpose() const { return purpose_; }
  /// Number of Philox blocks consumed so far.
  std::uint64_t draw_index() const { return block_; }

  std::uint64_t next_u64();
  double uniform();
  /// Unbiased integer in [0, n) by rejection on the top bits.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  void fill_normal(std::span<double> out, double stddev = 1.0);
  std::vector<double> normals(std::size_t count, double stddev = 1.0);

  /// k distinct values from [0, n), uniformly, in draw order (partial
  /// Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint32_t, 4> next_block();

  std::uint64_t seed_;
  std::string purpose_;
  std::uint64_t purpose_hash_;
  std::uint64_t block_ = 0;
  // Pending second 64-bit half of the last block (for next_u64).
  bool has_spare_word_ = false;
  std::uint64_t spare_word_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace rlab::num

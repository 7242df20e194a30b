#include "rlab/numcore/rng.hpp"

#include <cmath>
#include <numbers>

#include "rlab/errors.hpp"

namespace rlab::num {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

double to_unit_open(std::uint64_t word) {
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  return (static_cast<double>(word >> 11) + 0.5) * kScale;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed, std::string purpose)
    : seed_(seed), purpose_(std::move(purpose)), purpose_hash_(fnv1a64(purpose_)) {}

RngStream RngStream::derive(std::string_view label) const {
  std::string child = purpose_;
  child += '/';
  child += label;
  return RngStream(seed_, std::move(child));
}

RngStream RngStream::derive(std::string_view label, std::uint64_t index) const {
  std::string child(label);
  child += '#';
  child += std::to_string(index);
  return derive(child);
}

std::array<std::uint32_t, 4> RngStream::next_block() {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
      static_cast<std::uint32_t>(purpose_hash_), static_cast<std::uint32_t>(purpose_hash_ >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                            static_cast<std::uint32_t>(seed_ >> 32)};
  ++block_;
  return philox4x32(ctr, key);
}

std::uint64_t RngStream::next_u64() {
  if (has_spare_word_) {
    has_spare_word_ = false;
    return spare_word_;
  }
  const auto b = next_block();
  spare_word_ = (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
  has_spare_word_ = true;
  return (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
}

double RngStream::uniform() { return to_unit_open(next_u64()); }

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw IndexError("uniform_index: empty range");
  // Rejection sampling: accept x < limit where limit is the largest
  // multiple of n representable in 64 bits.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  while (true) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

double RngStream::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  const auto b = next_block();
  const double u1 = to_unit_open((static_cast<std::uint64_t>(b[1]) << 32) | b[0]);
  const double u2 = to_unit_open((static_cast<std::uint64_t>(b[3]) << 32) | b[2]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_normal_ = true;
  return r * std::cos(theta);
}

void RngStream::fill_normal(std::span<double> out, double stddev) {
  for (auto& v : out) v = stddev * normal();
}

std::vector<double> RngStream::normals(std::size_t count, double stddev) {
  std::vector<double> out(count);
  fill_normal(out, stddev);
  return out;
}

std::vector<std::size_t> RngStream::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) {
    throw IndexError("sample_without_replacement: k=" + std::to_string(k) + " > n=" +
                     std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace rlab::num

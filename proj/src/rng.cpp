#include "levisim/rng.hpp"

#include <cmath>

#include "levisim/constants.hpp"

namespace levisim {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(std::array<std::uint32_t, 4>& x, std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * x[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * x[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t key) : key64_(key) {}

std::uint64_t RngStream::derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t k = splitmix64(seed);
  for (std::uint64_t p : path) k = splitmix64(k ^ splitmix64(p + 0xA5A5A5A5A5A5A5A5ull));
  return k;
}

RngStream RngStream::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return RngStream(derive_key(seed, path));
}

void RngStream::refill() {
  std::array<std::uint32_t, 4> x = counter_;
  std::uint32_t k0 = static_cast<std::uint32_t>(key64_);
  std::uint32_t k1 = static_cast<std::uint32_t>(key64_ >> 32);
  for (int round = 0; round < 10; ++round) {
    philox_round(x, k0, k1);
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  block_ = x;
  avail_ = 4;
  // 128-bit counter increment
  if (++counter_[0] == 0 && ++counter_[1] == 0 && ++counter_[2] == 0) ++counter_[3];
}

std::uint64_t RngStream::next_u64() {
  if (avail_ < 2) refill();
  const std::uint64_t lo = block_[4 - avail_];
  const std::uint64_t hi = block_[4 - avail_ + 1];
  avail_ -= 2;
  return (hi << 32) | lo;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller, sine branch only: fixed consumption of two uniforms per call
  // keeps draw sequences aligned across configurations.
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::sin(2.0 * constants::pi * u2);
}

Vec3 RngStream::normal3() {
  Vec3 v;
  v[0] = normal();
  v[1] = normal();
  v[2] = normal();
  return v;
}

}  // namespace levisim

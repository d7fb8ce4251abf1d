#include "jse/rng.hpp"

#include <cmath>
#include <numbers>

namespace jse {
namespace {

// splitmix64: tiny, fast, passes BigCrush as a mixer. Plenty for noise
// synthesis; nothing here is security sensitive.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed)
    : identity_(mix64(seed ^ 0xA02B2C5E8D1F6AA7ull)), state_(identity_) {}

Rng::Rng(std::uint64_t identity, int) : identity_(identity), state_(identity) {}

Rng Rng::split(std::uint64_t key) const {
  // Children depend on the parent's identity only, never on how many draws
  // the parent has made, so adding draws upstream cannot shift a stream.
  return Rng(mix64(identity_ ^ mix64(key * 0x9E3779B97F4A7C15ull + 1)), 0);
}

Rng Rng::split(std::string_view label) const { return split(fnv1a(label)); }

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform01() {
  // 53 uniform bits mapped to (0, 1]; never returns 0 so log() below is safe.
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

Vec3 Rng::gaussian3() {
  Vec3 v;
  v.x() = gaussian();
  v.y() = gaussian();
  v.z() = gaussian();
  return v;
}

}  // namespace jse

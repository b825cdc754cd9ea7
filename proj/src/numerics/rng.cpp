#include "rica/rng.hpp"

#include <cmath>
#include <numbers>

#include "rica/error.hpp"

namespace rica::rng {

double Key::uniform(std::uint64_t counter) const {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double Key::normal(std::uint64_t counter) const {
  // Normals draw from the upper half of the counter space so they never
  // overlap uniforms taken from the same stream.
  constexpr std::uint64_t kNormalDomain = 1ULL << 63;
  const double u1 = uniform(kNormalDomain | (2 * counter));
  const double u2 = uniform(kNormalDomain | (2 * counter + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Stream::integer(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ContractError("empty integer range");
  const auto span = static_cast<double>(hi - lo + 1);
  auto v = lo + static_cast<std::int64_t>(std::floor(uniform() * span));
  return v > hi ? hi : v;
}

}  // namespace rica::rng

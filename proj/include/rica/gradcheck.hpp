#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference checks of the autodiff engine, shared by the unit tests
// and the acceptance harness.
namespace rica::gradcheck {

inline constexpr double kFiniteDifferenceEps = 1e-5;

struct PrimitiveReport {
  std::string name;
  std::size_t trials = 0;
  double max_relative_error = 0.0;
};

// Every primitive (and each broadcast form of the binary ones) over `trials`
// random shapes up to 8x8. The scalar objective is sum(op(x) * W) for a fixed
// random W, so that no gradient is trivially constant.
std::vector<PrimitiveReport> check_primitives(std::size_t trials, std::uint64_t seed);

// Relative error between backward() and central differences over every
// parameter of a tiny model (T=4, D=8, K=2) in deterministic mode.
double check_model(std::uint64_t seed);

}  // namespace rica::gradcheck

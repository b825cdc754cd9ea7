#pragma once

#include <span>
#include <vector>

#include "rica/autodiff.hpp"
#include "rica/rng.hpp"

// Diagonal-Gaussian step embeddings.
namespace rica::stochastic {

// Standard deviations are kept inside [kSigmaMin, kSigmaMax]; the network
// predicts log-variance, which is clamped to the matching range.
inline constexpr double kSigmaMin = 1e-4;
inline constexpr double kSigmaMax = 1e4;
double logvar_min();
double logvar_max();

struct GaussianEmbedding {
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t dim() const { return mu.size(); }
  // Throws DimensionError / DomainError if the invariants do not hold.
  void check() const;
};

// mu + sigma * noise.
std::vector<double> sample_reparameterized(const GaussianEmbedding& g,
                                           std::span<const double> noise);

// KL(N(mu, diag sigma^2) || N(0, I)) = 1/2 sum_j (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1).
double kl_standard_normal(const GaussianEmbedding& g);

// Sum over steps of the harmonic mean of the per-dimension sigmas:
//   sum_s D / sum_j (1 / sigma_j^s).
double uncertainty(std::span<const std::vector<double>> per_step_sigmas);

// Graph versions used during training. `mu` and `logvar` are [K, D]; rows are
// steps.
ad::Var sigma_from_logvar(ad::Var logvar);          // exp(logvar / 2), clamped
ad::Var clamp_logvar(ad::Var logvar);
ad::Var sample_reparameterized(ad::Var mu, ad::Var sigma, const Tensor& noise);
// Summed over all rows and dimensions; takes the clamped log-variance.
ad::Var kl_standard_normal(ad::Var mu, ad::Var logvar);

// [rows, cols] standard-normal draws from a keyed stream.
Tensor standard_normal(rng::Key key, std::size_t rows, std::size_t cols);

}  // namespace rica::stochastic

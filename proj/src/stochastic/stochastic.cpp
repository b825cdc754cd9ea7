#include "rica/stochastic.hpp"

#include <cmath>
#include <string>

#include "rica/error.hpp"

namespace rica::stochastic {

double logvar_min() { return 2.0 * std::log(kSigmaMin); }
double logvar_max() { return 2.0 * std::log(kSigmaMax); }

void GaussianEmbedding::check() const {
  if (mu.size() != sigma.size()) {
    throw DimensionError("gaussian embedding: mu has " + std::to_string(mu.size()) +
                         " dims, sigma has " + std::to_string(sigma.size()));
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw DomainError("gaussian embedding sigma must be positive and finite");
    }
  }
}

std::vector<double> sample_reparameterized(const GaussianEmbedding& g,
                                           std::span<const double> noise) {
  if (noise.size() != g.dim()) {
    throw DimensionError("noise length " + std::to_string(noise.size()) +
                         " does not match embedding dim " + std::to_string(g.dim()));
  }
  std::vector<double> z(g.dim());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = g.mu[j] + g.sigma[j] * noise[j];
  return z;
}

double kl_standard_normal(const GaussianEmbedding& g) {
  g.check();
  double kl = 0.0;
  for (std::size_t j = 0; j < g.dim(); ++j) {
    const double var = g.sigma[j] * g.sigma[j];
    kl += g.mu[j] * g.mu[j] + var - std::log(var) - 1.0;
  }
  return 0.5 * kl;
}

double uncertainty(std::span<const std::vector<double>> per_step_sigmas) {
  if (per_step_sigmas.empty()) throw ContractError("uncertainty needs at least one step");
  const auto dim = per_step_sigmas.front().size();
  double total = 0.0;
  for (const auto& sig : per_step_sigmas) {
    if (sig.size() != dim || dim == 0) throw DimensionError("uncertainty: ragged sigma list");
    double inv_sum = 0.0;
    for (double s : sig) {
      if (!(s > 0.0)) throw DomainError("uncertainty: sigma must be positive");
      inv_sum += 1.0 / s;
    }
    total += static_cast<double>(dim) / inv_sum;
  }
  return total;
}

ad::Var clamp_logvar(ad::Var logvar) { return ad::clamp(logvar, logvar_min(), logvar_max()); }

ad::Var sigma_from_logvar(ad::Var logvar) { return ad::exp(ad::scale(clamp_logvar(logvar), 0.5)); }

ad::Var sample_reparameterized(ad::Var mu, ad::Var sigma, const Tensor& noise) {
  if (noise.shape() != mu.shape()) {
    throw DimensionError("noise shape " + shape_string(noise.shape()) + " does not match " +
                         shape_string(mu.shape()));
  }
  auto& g = mu.graph();
  return ad::add(mu, ad::mul(sigma, g.constant(noise)));
}

ad::Var kl_standard_normal(ad::Var mu, ad::Var logvar) {
  // 1/2 sum(mu^2 + exp(logvar) - logvar - 1)
  auto& g = mu.graph();
  auto terms = ad::sub(ad::add(ad::mul(mu, mu), ad::exp(logvar)), logvar);
  auto total = ad::sum(terms);
  const double count = static_cast<double>(mu.value().size());
  return ad::scale(ad::sub(total, g.constant(Tensor::scalar(count))), 0.5);
}

Tensor standard_normal(rng::Key key, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = key.normal(i);
  return t;
}

}  // namespace rica::stochastic

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rica/autodiff.hpp"
#include "rica/stochastic.hpp"

// Training objective: MSE + beta * KL (the VIB loss) plus the temporal
// auxiliary losses on the last cross-attention map, weighted by gamma.
namespace rica::loss {

struct LossConfig {
  double beta_start = 1e-5;
  double beta_max = 0.005;
  double gamma = 0.1;
  double margin = 1.0;        // clip-index units
  double output_sigma = 0.1;  // fixed output std of the score likelihood
  std::uint64_t total_steps = 1;

  void check() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossBreakdown {
  double mse = 0.0;
  std::optional<double> kl;  // absent in deterministic mode
  double sparsity = 0.0;
  double ranking = 0.0;
  double total = 0.0;
  double beta_used = 0.0;
  double gamma_used = 0.0;

  // mse + beta_used * kl + gamma_used * (sparsity + ranking).
  double recomposed() const;
};

// (1/N) sum (pred - target)^2 / sigma^2.
double mse_loss(std::span<const double> pred, std::span<const double> target, double sigma);

// Temporally weighted center per attention row, with clips numbered from 1.
std::vector<double> attention_centers(const Tensor& attention);

// sum_s sum_t |t - center_s| * A[s, t].
double sparsity_loss(const Tensor& attention);

// Hinges that keep centers ordered and inside [1 + m, T - m]:
//   sum_{s<K} max(0, c_s - c_{s+1} + m) + max(0, 1 - c_1 + m) + max(0, c_K - T + m).
double ranking_loss(std::span<const double> centers, std::size_t clips, double margin);

// Linear from beta_start at step 0 to beta_max at total_steps.
double beta_schedule(std::uint64_t step, const LossConfig& cfg);

struct SampleOutputs {
  double prediction = 0.0;
  double target = 0.0;
  std::vector<stochastic::GaussianEmbedding> embeddings;  // empty in deterministic mode
  Tensor attention;                                       // [K, T]
};

// Batch objective. KL is summed over a sample's steps and averaged over the
// batch; the auxiliary terms are averaged over the batch too.
LossBreakdown total_loss(std::span<const SampleOutputs> batch, std::uint64_t step,
                         const LossConfig& cfg, bool stochastic_mode, bool use_aux = true);

// Graph versions for one sample.
ad::Var attention_centers(ad::Var attention);  // [K, T] -> [K, 1]
ad::Var sparsity_loss(ad::Var attention);
ad::Var ranking_loss(ad::Var centers, std::size_t clips, double margin);

struct SampleObjective {
  ad::Var total;
  double mse = 0.0;
  std::optional<double> kl;
  double sparsity = 0.0;
  double ranking = 0.0;
};

// Per-sample objective: (y_hat - y)^2 / sigma^2 + beta * KL + gamma * (sparsity
// + ranking). `logvar` must already be clamped; pass std::nullopt for mu/logvar
// in deterministic mode.
SampleObjective sample_objective(ad::Var score, double target, std::optional<ad::Var> mu,
                                 std::optional<ad::Var> logvar, ad::Var attention, double beta,
                                 double gamma, const LossConfig& cfg, bool use_aux);

}  // namespace rica::loss

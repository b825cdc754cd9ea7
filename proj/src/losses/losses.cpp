#include "rica/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rica/error.hpp"

namespace rica::loss {

void LossConfig::check() const {
  if (!(beta_start > 0.0) || !(beta_max > 0.0)) throw ConfigError("beta values must be positive");
  if (beta_start > beta_max) throw ConfigError("beta_start must not exceed beta_max");
  if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(output_sigma > 0.0)) throw ConfigError("output_sigma must be positive");
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
}

double LossBreakdown::recomposed() const {
  return mse + beta_used * kl.value_or(0.0) + gamma_used * (sparsity + ranking);
}

double mse_loss(std::span<const double> pred, std::span<const double> target, double sigma) {
  if (pred.size() != target.size()) throw DimensionError("mse_loss: length mismatch");
  if (pred.empty()) throw ContractError("mse_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / (static_cast<double>(pred.size()) * sigma * sigma);
}

std::vector<double> attention_centers(const Tensor& attention) {
  std::vector<double> centers(attention.rows(), 0.0);
  for (std::size_t s = 0; s < attention.rows(); ++s) {
    for (std::size_t t = 0; t < attention.cols(); ++t) {
      centers[s] += static_cast<double>(t + 1) * attention.at(s, t);
    }
  }
  return centers;
}

double sparsity_loss(const Tensor& attention) {
  const auto centers = attention_centers(attention);
  double loss = 0.0;
  for (std::size_t s = 0; s < attention.rows(); ++s) {
    for (std::size_t t = 0; t < attention.cols(); ++t) {
      loss += std::fabs(static_cast<double>(t + 1) - centers[s]) * attention.at(s, t);
    }
  }
  return loss;
}

double ranking_loss(std::span<const double> centers, std::size_t clips, double margin) {
  if (centers.empty()) throw ContractError("ranking_loss needs at least one center");
  double loss = 0.0;
  for (std::size_t s = 0; s + 1 < centers.size(); ++s) {
    loss += std::max(0.0, centers[s] - centers[s + 1] + margin);
  }
  loss += std::max(0.0, 1.0 - centers.front() + margin);
  loss += std::max(0.0, centers.back() - static_cast<double>(clips) + margin);
  return loss;
}

double beta_schedule(std::uint64_t step, const LossConfig& cfg) {
  if (step > cfg.total_steps) {
    throw ContractError("beta_schedule: step " + std::to_string(step) + " beyond total " +
                        std::to_string(cfg.total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.beta_start + (cfg.beta_max - cfg.beta_start) * frac;
}

LossBreakdown total_loss(std::span<const SampleOutputs> batch, std::uint64_t step,
                         const LossConfig& cfg, bool stochastic_mode, bool use_aux) {
  if (batch.empty()) throw ContractError("total_loss: empty batch");
  const double n = static_cast<double>(batch.size());
  std::vector<double> pred;
  std::vector<double> target;
  LossBreakdown out;
  double kl = 0.0;
  for (const auto& s : batch) {
    pred.push_back(s.prediction);
    target.push_back(s.target);
    if (stochastic_mode) {
      for (const auto& g : s.embeddings) kl += stochastic::kl_standard_normal(g);
    }
    if (use_aux) {
      out.sparsity += sparsity_loss(s.attention);
      out.ranking += ranking_loss(attention_centers(s.attention), s.attention.cols(), cfg.margin);
    }
  }
  out.mse = mse_loss(pred, target, cfg.output_sigma);
  out.sparsity /= n;
  out.ranking /= n;
  if (stochastic_mode) {
    out.kl = kl / n;
    out.beta_used = beta_schedule(step, cfg);
  }
  out.gamma_used = use_aux ? cfg.gamma : 0.0;
  out.total = out.recomposed();
  return out;
}

ad::Var attention_centers(ad::Var attention) {
  const auto clips = attention.shape()[1];
  Tensor t({1, clips});
  for (std::size_t i = 0; i < clips; ++i) t[i] = static_cast<double>(i + 1);
  return ad::sum_cols(ad::mul(attention, attention.graph().constant(std::move(t))));
}

ad::Var sparsity_loss(ad::Var attention) {
  const auto rows = attention.shape()[0];
  const auto clips = attention.shape()[1];
  Tensor grid({rows, clips});
  for (std::size_t s = 0; s < rows; ++s) {
    for (std::size_t i = 0; i < clips; ++i) grid.at(s, i) = static_cast<double>(i + 1);
  }
  auto& g = attention.graph();
  auto dist = ad::abs(ad::sub(g.constant(std::move(grid)), attention_centers(attention)));
  return ad::sum(ad::mul(dist, attention));
}

ad::Var ranking_loss(ad::Var centers, std::size_t clips, double margin) {
  auto& g = centers.graph();
  const auto k = centers.shape()[0];
  auto m = g.constant(Tensor::scalar(margin));
  auto first = ad::slice(centers, 0, 0, 1);
  auto last = ad::slice(centers, 0, k - 1, 1);
  auto low = ad::relu(ad::sub(g.constant(Tensor::scalar(1.0 + margin)), first));
  auto high = ad::relu(ad::sub(ad::add(last, m), g.constant(Tensor::scalar(static_cast<double>(clips)))));
  auto loss = ad::add(ad::sum(low), ad::sum(high));
  if (k > 1) {
    auto order = ad::relu(ad::add(ad::sub(ad::slice(centers, 0, 0, k - 1), ad::slice(centers, 0, 1, k - 1)), m));
    loss = ad::add(loss, ad::sum(order));
  }
  return loss;
}

namespace {

// Re-raises a numerical fault with the name of the loss term that produced it.
template <typename F>
auto labelled(const char* component, F&& f) {
  try {
    return f();
  } catch (const NumericalFault& e) {
    throw NumericalFault(std::string("loss component '") + component + "': " + e.what());
  }
}

}  // namespace

SampleObjective sample_objective(ad::Var score, double target, std::optional<ad::Var> mu,
                                 std::optional<ad::Var> logvar, ad::Var attention, double beta,
                                 double gamma, const LossConfig& cfg, bool use_aux) {
  auto& g = score.graph();
  SampleObjective out;
  auto total = labelled("mse", [&] {
    auto diff = ad::sub(score, g.constant(Tensor({1, 1}, target)));
    return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / (cfg.output_sigma * cfg.output_sigma));
  });
  out.mse = total.value().item();
  if (mu && logvar) {
    auto kl = labelled("kl", [&] { return stochastic::kl_standard_normal(*mu, *logvar); });
    out.kl = kl.value().item();
    total = ad::add(total, ad::scale(kl, beta));
  }
  if (use_aux && gamma > 0.0) {
    auto sp = labelled("sparsity", [&] { return sparsity_loss(attention); });
    auto rk = labelled("ranking", [&] {
      return ranking_loss(attention_centers(attention), attention.shape()[1], cfg.margin);
    });
    out.sparsity = sp.value().item();
    out.ranking = rk.value().item();
    total = ad::add(total, ad::scale(ad::add(sp, rk), gamma));
  } else if (use_aux) {
    out.sparsity = loss::sparsity_loss(attention.value());
    out.ranking = loss::ranking_loss(loss::attention_centers(attention.value()),
                                     attention.shape()[1], cfg.margin);
  }
  out.total = total;
  return out;
}

}  // namespace rica::loss

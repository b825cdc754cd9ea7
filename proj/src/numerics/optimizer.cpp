#include "rica/optimizer.hpp"

#include <cmath>
#include <string>

#include "rica/error.hpp"

namespace rica::optim {

void OptimizerState::reset(std::span<const Tensor> params) {
  step = 0;
  first_moment.clear();
  second_moment.clear();
  for (const auto& p : params) {
    first_moment.emplace_back(p.shape());
    second_moment.emplace_back(p.shape());
  }
}

float round_to_float(double v) { return static_cast<float>(v); }

void round_to_float(Tensor& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads,
                OptimizerState& state, std::span<const double> learning_rates) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " grads");
  }
  if (!learning_rates.empty() && learning_rates.size() != params.size()) {
    throw DimensionError("adamw_step: learning rate count does not match params");
  }
  if (state.first_moment.size() != params.size()) state.reset(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() ||
        state.first_moment[i].shape() != params[i].shape()) {
      throw DimensionError("adamw_step: shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      throw NumericalFault("adamw_step: non-finite gradient at parameter " + std::to_string(i));
    }
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const bool round = state.storage == Storage::kFloat32;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = learning_rates.empty() ? h.lr : learning_rates[i];
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      if (round) {
        m[k] = static_cast<float>(m[k]);
        v[k] = static_cast<float>(v[k]);
      }
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * p[k]);
      if (round) p[k] = static_cast<float>(p[k]);
    }
  }
}

}  // namespace rica::optim

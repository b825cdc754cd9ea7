#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rica/tensor.hpp"

namespace rica::optim {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

enum class Storage : std::uint8_t {
  kFloat64,
  // Parameters and moments are rounded to the nearest float after every
  // update, so a float32 checkpoint captures the state exactly.
  kFloat32,
};

struct OptimizerState {
  AdamWHyper hyper;
  Storage storage = Storage::kFloat64;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  // Zero moments shaped like params.
  void reset(std::span<const Tensor> params);
};

// One decoupled-weight-decay Adam update, in place:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
//   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
// with bias-corrected m_hat, v_hat. `learning_rates` gives one rate per
// parameter (parameter groups); when empty, hyper.lr applies to all.
void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads,
                OptimizerState& state, std::span<const double> learning_rates = {});

float round_to_float(double v);
void round_to_float(Tensor& t);

}  // namespace rica::optim

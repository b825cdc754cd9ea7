#include "rica/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "rica/autodiff.hpp"
#include "rica/model.hpp"
#include "rica/rng.hpp"
#include "rica/rubric.hpp"

namespace rica::gradcheck {
namespace {

using ad::Var;

struct Case {
  const char* name;
  std::function<std::vector<Tensor>(rng::Stream&, std::size_t, std::size_t)> inputs;
  std::function<Var(const std::vector<Var>&)> op;
};

Tensor normal(rng::Stream& st, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = scale * st.normal();
  return t;
}

Tensor uniform(rng::Stream& st, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = st.uniform(lo, hi);
  return t;
}

// Normal draws kept at least `gap` away from each kink.
Tensor away_from(rng::Stream& st, std::size_t r, std::size_t c, std::vector<double> kinks, double gap) {
  Tensor t({r, c});
  for (auto& v : t.data()) {
    do {
      v = st.normal();
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::fabs(v - k) < gap; }));
  }
  return t;
}

std::vector<Case> cases() {
  using In = std::vector<Tensor>;
  auto same2 = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c), normal(st, r, c)}; };
  auto one = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c)}; };
  auto with_scalar = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c), normal(st, 1, 1)}; };
  auto with_row = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c), normal(st, 1, c)}; };
  auto with_col = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c), normal(st, r, 1)}; };
  // Two columns normalise to exactly +-1, leaving only an O(eps) gradient that
  // finite differences cannot resolve; start at three.
  auto wide = [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, std::max<std::size_t>(c, 3))}; };
  return {
      {"matmul",
       [](rng::Stream& st, std::size_t r, std::size_t c) {
         const auto k = static_cast<std::size_t>(st.integer(1, 8));
         return In{normal(st, r, k), normal(st, k, c)};
       },
       [](const auto& v) { return ad::matmul(v[0], v[1]); }},
      {"add", same2, [](const auto& v) { return ad::add(v[0], v[1]); }},
      {"add_scalar", with_scalar, [](const auto& v) { return ad::add(v[0], v[1]); }},
      {"add_row", with_row, [](const auto& v) { return ad::add(v[0], v[1]); }},
      {"add_col", with_col, [](const auto& v) { return ad::add(v[0], v[1]); }},
      {"sub", same2, [](const auto& v) { return ad::sub(v[0], v[1]); }},
      {"sub_row", with_row, [](const auto& v) { return ad::sub(v[0], v[1]); }},
      {"mul", same2, [](const auto& v) { return ad::mul(v[0], v[1]); }},
      {"mul_scalar", with_scalar, [](const auto& v) { return ad::mul(v[0], v[1]); }},
      {"mul_col", with_col, [](const auto& v) { return ad::mul(v[0], v[1]); }},
      {"scale", one, [](const auto& v) { return ad::scale(v[0], -1.7); }},
      {"sum", one, [](const auto& v) { return ad::sum(v[0]); }},
      {"mean", one, [](const auto& v) { return ad::mean(v[0]); }},
      {"sum_rows", one, [](const auto& v) { return ad::sum_rows(v[0]); }},
      {"mean_rows", one, [](const auto& v) { return ad::mean_rows(v[0]); }},
      {"sum_cols", one, [](const auto& v) { return ad::sum_cols(v[0]); }},
      {"exp", [](rng::Stream& st, std::size_t r, std::size_t c) { return In{normal(st, r, c, 0.5)}; },
       [](const auto& v) { return ad::exp(v[0]); }},
      {"log", [](rng::Stream& st, std::size_t r, std::size_t c) { return In{uniform(st, r, c, 0.2, 2.0)}; },
       [](const auto& v) { return ad::log(v[0]); }},
      {"gelu", one, [](const auto& v) { return ad::gelu(v[0]); }},
      {"relu", [](rng::Stream& st, std::size_t r, std::size_t c) { return In{away_from(st, r, c, {0.0}, 0.05)}; },
       [](const auto& v) { return ad::relu(v[0]); }},
      {"abs", [](rng::Stream& st, std::size_t r, std::size_t c) { return In{away_from(st, r, c, {0.0}, 0.05)}; },
       [](const auto& v) { return ad::abs(v[0]); }},
      {"clamp",
       [](rng::Stream& st, std::size_t r, std::size_t c) { return In{away_from(st, r, c, {-0.5, 0.5}, 0.05)}; },
       [](const auto& v) { return ad::clamp(v[0], -0.5, 0.5); }},
      {"softmax_rows", one, [](const auto& v) { return ad::softmax_rows(v[0]); }},
      {"layer_norm_rows", wide, [](const auto& v) { return ad::layer_norm_rows(v[0]); }},
      {"concat_rows", same2,
       [](const auto& v) {
         const Var parts[] = {v[0], v[1]};
         return ad::concat(parts, 0);
       }},
      {"concat_cols", with_col,
       [](const auto& v) {
         const Var parts[] = {v[0], v[1]};
         return ad::concat(parts, 1);
       }},
      {"slice_rows", one,
       [](const auto& v) {
         const auto r = v[0].shape()[0];
         return ad::slice(v[0], 0, r / 2, r - r / 2);
       }},
      {"slice_cols", one,
       [](const auto& v) {
         const auto c = v[0].shape()[1];
         return ad::slice(v[0], 1, c / 3, c - c / 3);
       }},
      {"transpose", one, [](const auto& v) { return ad::transpose(v[0]); }},
  };
}

double objective(const Case& c, const std::vector<Tensor>& inputs, const Tensor& weights) {
  ad::Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  return ad::sum(ad::mul(c.op(vars), g.constant(weights))).value().item();
}

}  // namespace

std::vector<PrimitiveReport> check_primitives(std::size_t trials, std::uint64_t seed) {
  std::vector<PrimitiveReport> reports;
  const auto all = cases();
  for (std::size_t ci = 0; ci < all.size(); ++ci) {
    const auto& c = all[ci];
    PrimitiveReport rep{c.name, trials, 0.0};
    for (std::size_t trial = 0; trial < trials; ++trial) {
      rng::Stream st(rng::Key(seed).derive({ci, trial}));
      const auto r = static_cast<std::size_t>(st.integer(1, 8));
      const auto cols = static_cast<std::size_t>(st.integer(1, 8));
      const auto inputs = c.inputs(st, r, cols);

      ad::Graph g;
      std::vector<Var> vars;
      for (const auto& t : inputs) vars.push_back(g.variable(t));
      auto y = c.op(vars);
      const auto w = normal(st, y.value().rows(), y.value().cols());
      const auto grads = g.backward(ad::sum(ad::mul(y, g.constant(w))));

      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const Tensor& x) {
          auto moved = inputs;
          moved[i] = x;
          return objective(c, moved, w);
        };
        const auto fd = ad::finite_difference_gradient(f, inputs[i], kFiniteDifferenceEps);
        rep.max_relative_error = std::max(rep.max_relative_error, ad::relative_error(grads[vars[i]], fd, 1e-8));
      }
    }
    reports.push_back(rep);
  }
  return reports;
}

double check_model(std::uint64_t seed) {
  model::ModelConfig cfg;
  cfg.d_feat = 4;
  cfg.d_text = 4;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.max_clips = 4;
  cfg.aggregator_hidden = 8;
  cfg.decoder_hidden = 8;
  auto params = model::init_model(cfg, seed);

  rng::Stream st(rng::Key(seed).derive(rng::hash_name("gradcheck-model")));
  const auto features = normal(st, 4, cfg.d_feat);
  const auto descriptors = normal(st, 2, cfg.d_text);
  rubric::RubricSpec spec;
  spec.step_types = {{0, "a"}, {1, "b"}};
  if (st.uniform() < 0.5) spec.stages = {{"s", {0, 1}}};
  const std::uint32_t steps[] = {0, 1};
  const auto dag = rubric::build_dag(spec, steps);

  auto score = [&](const model::ModelParams& p) {
    ad::Graph g;
    model::Bound b(g, p);
    return model::forward_graph(b, features, descriptors, dag, nullptr).score.value().item();
  };

  ad::Graph g;
  model::Bound b(g, params);
  const auto out = model::forward_graph(b, features, descriptors, dag, nullptr);
  const auto grads = b.gradients(g.backward(ad::sum(out.score)));

  double diff2 = 0.0;
  double analytic2 = 0.0;
  double numeric2 = 0.0;
  for (std::size_t i = 0; i < params.params.size(); ++i) {
    const Tensor original = params.params.value(i);
    auto f = [&](const Tensor& x) {
      params.params.value(i) = x;
      const double s = score(params);
      params.params.value(i) = original;
      return s;
    };
    const auto fd = ad::finite_difference_gradient(f, original, kFiniteDifferenceEps);
    for (std::size_t k = 0; k < fd.size(); ++k) {
      const double a = grads[i][k];
      diff2 += (a - fd[k]) * (a - fd[k]);
      analytic2 += a * a;
      numeric2 += fd[k] * fd[k];
    }
  }
  const double denom = std::max({std::sqrt(analytic2), std::sqrt(numeric2), 1e-12});
  return std::sqrt(diff2) / denom;
}

}  // namespace rica::gradcheck

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rica/autodiff.hpp"
#include "rica/error.hpp"
#include "rica/losses.hpp"
#include "rica/rng.hpp"

using namespace rica;

namespace {

Tensor one_hot_rows(std::size_t t, const std::vector<std::size_t>& hot) {
  Tensor a({hot.size(), t});
  for (std::size_t k = 0; k < hot.size(); ++k) a.at(k, hot[k] - 1) = 1.0;
  return a;
}

Tensor random_attention(rng::Stream& st, std::size_t k, std::size_t t) {
  Tensor a({k, t});
  for (std::size_t r = 0; r < k; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < t; ++c) s += (a.at(r, c) = std::exp(2 * st.normal()));
    for (std::size_t c = 0; c < t; ++c) a.at(r, c) /= s;
  }
  return a;
}

}  // namespace

TEST(MseLoss, Examples) {
  const std::vector<double> y = {0.2, 0.4};
  EXPECT_EQ(loss::mse_loss(y, y, 1.0), 0.0);
  EXPECT_EQ(loss::mse_loss(std::vector<double>{3.0}, std::vector<double>{1.0}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(loss::mse_loss(std::vector<double>{1.0, 3.0}, std::vector<double>{0.0, 0.0}, 2.0), 1.25);
  const std::vector<double> none;
  EXPECT_THROW(loss::mse_loss(none, none, 1.0), ContractError);
}

TEST(AttentionCenters, Examples) {
  EXPECT_EQ(loss::attention_centers(one_hot_rows(8, {5})), std::vector<double>{5.0});
  EXPECT_DOUBLE_EQ(loss::attention_centers(Tensor({1, 4}, 0.25))[0], 2.5);
  EXPECT_DOUBLE_EQ(loss::attention_centers(Tensor::matrix(1, 3, {0.5, 0.0, 0.5}))[0], 2.0);
}

TEST(SparsityLoss, Examples) {
  EXPECT_EQ(loss::sparsity_loss(one_hot_rows(6, {2, 4, 6})), 0.0);
  EXPECT_DOUBLE_EQ(loss::sparsity_loss(Tensor({1, 2}, 0.5)), 0.5);
}

TEST(SparsityLoss, ZeroOnlyForOneHotRows) {
  rng::Stream st(rng::Key(31));
  for (int trial = 0; trial < 50; ++trial) EXPECT_GT(loss::sparsity_loss(random_attention(st, 3, 7)), 0.0);
}

TEST(RankingLoss, Examples) {
  EXPECT_EQ(loss::ranking_loss(std::vector<double>{2, 5, 8}, 10, 1.0), 0.0);
  EXPECT_EQ(loss::ranking_loss(std::vector<double>{5, 2}, 10, 1.0), 4.0);
  for (double c : {2.0, 5.0, 9.0}) EXPECT_EQ(loss::ranking_loss(std::vector<double>{c}, 10, 1.0), 0.0);
  EXPECT_EQ(loss::ranking_loss(std::vector<double>{1.0}, 10, 1.0), 1.0);
  EXPECT_EQ(loss::ranking_loss(std::vector<double>{10.0}, 10, 1.0), 1.0);
}

TEST(RankingLoss, ShiftInvariantAwayFromBoundaries) {
  rng::Stream st(rng::Key(32));
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<std::size_t>(st.integer(1, 5));
    std::vector<double> c(k);
    for (auto& v : c) v = st.uniform(20.0, 30.0);
    const double shift = st.uniform(-5.0, 5.0);
    auto shifted = c;
    for (auto& v : shifted) v += shift;
    EXPECT_NEAR(loss::ranking_loss(c, 60, 1.0), loss::ranking_loss(shifted, 60, 1.0), 1e-12);
  }
}

TEST(BetaSchedule, EndpointsMidpointAndMonotone) {
  loss::LossConfig cfg;
  cfg.total_steps = 1000;
  EXPECT_DOUBLE_EQ(loss::beta_schedule(0, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(loss::beta_schedule(1000, cfg), 0.005);
  EXPECT_NEAR(loss::beta_schedule(500, cfg), 0.002505, 1e-15);
  double prev = 0.0;
  for (std::uint64_t s = 0; s <= 1000; ++s) {
    const double b = loss::beta_schedule(s, cfg);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_THROW(loss::beta_schedule(1001, cfg), ContractError);
}

TEST(LossDefaults, PaperValues) {
  const loss::LossConfig cfg;
  EXPECT_EQ(cfg.beta_start, 1e-5);
  EXPECT_EQ(cfg.beta_max, 0.005);
  EXPECT_EQ(cfg.gamma, 0.1);
  EXPECT_EQ(cfg.margin, 1.0);
}

TEST(TotalLoss, ZeroWeightsLeaveMse) {
  loss::LossConfig cfg;
  cfg.beta_start = cfg.beta_max = 0.0;
  cfg.gamma = 0.0;
  rng::Stream st(rng::Key(33));
  std::vector<loss::SampleOutputs> batch(3);
  for (auto& s : batch) {
    s.prediction = st.uniform();
    s.target = st.uniform();
    s.embeddings = {{{st.normal(), st.normal()}, {0.5, 2.0}}};
    s.attention = random_attention(st, 1, 5);
  }
  const auto b = loss::total_loss(batch, 0, cfg, true);
  EXPECT_EQ(b.total, b.mse);
  EXPECT_GT(b.mse, 0.0);
}

TEST(TotalLoss, PerfectBatchIsZero) {
  const loss::LossConfig cfg;
  std::vector<loss::SampleOutputs> batch(2);
  for (auto& s : batch) {
    s.prediction = s.target = 0.3;
    s.embeddings = {{{0, 0}, {1, 1}}, {{0, 0}, {1, 1}}};
    s.attention = one_hot_rows(8, {3, 6});
  }
  EXPECT_EQ(loss::total_loss(batch, 0, cfg, true).total, 0.0);
}

TEST(TotalLoss, BreakdownRecomposes) {
  loss::LossConfig cfg;
  cfg.total_steps = 10;
  rng::Stream st(rng::Key(34));
  std::vector<loss::SampleOutputs> batch(4);
  for (auto& s : batch) {
    s.prediction = st.uniform();
    s.target = st.uniform();
    for (int k = 0; k < 3; ++k) {
      s.embeddings.push_back({{st.normal(), st.normal(), st.normal()}, {st.uniform(0.2, 2), st.uniform(0.2, 2), 1.0}});
    }
    s.attention = random_attention(st, 3, 6);
  }
  for (bool stochastic_mode : {true, false}) {
    const auto b = loss::total_loss(batch, 4, cfg, stochastic_mode);
    EXPECT_NEAR(b.total, b.recomposed(), 1e-9);
    EXPECT_NEAR(b.total, b.mse + b.beta_used * b.kl.value_or(0.0) + cfg.gamma * (b.sparsity + b.ranking), 1e-9);
    EXPECT_EQ(b.kl.has_value(), stochastic_mode);
    EXPECT_GE(b.mse, 0.0);
    EXPECT_GE(b.sparsity, 0.0);
    EXPECT_GE(b.ranking, 0.0);
  }
  const auto off = loss::total_loss(batch, 4, cfg, true, false);
  EXPECT_EQ(off.gamma_used, 0.0);
}

TEST(GraphLosses, MatchValuesAndFiniteDifferences) {
  rng::Stream st(rng::Key(35));
  const double eps = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = static_cast<std::size_t>(st.integer(3, 9));
    const auto attention = random_attention(st, 3, t);
    auto objective = [&](const Tensor& a, ad::Var* grad_var, ad::Gradients* grads) {
      ad::Graph g;
      const auto v = g.variable(a);
      const auto c = loss::attention_centers(v);
      const auto out = ad::add(loss::sparsity_loss(v), loss::ranking_loss(c, t, 1.0));
      if (grads != nullptr) {
        *grads = g.backward(out);
        *grad_var = v;
      }
      return out.value().item();
    };
    const double direct = loss::sparsity_loss(attention) +
                          loss::ranking_loss(loss::attention_centers(attention), t, 1.0);
    ad::Var v;
    ad::Gradients grads;
    EXPECT_NEAR(objective(attention, &v, &grads), direct, 1e-12);
    const Tensor analytic = grads[v];
    double num = 0, den = 0;
    for (std::size_t i = 0; i < attention.size(); ++i) {
      auto up = attention;
      auto down = attention;
      up[i] += eps;
      down[i] -= eps;
      const double fd = (objective(up, nullptr, nullptr) - objective(down, nullptr, nullptr)) / (2 * eps);
      num += (fd - analytic[i]) * (fd - analytic[i]);
      den += fd * fd + analytic[i] * analytic[i];
    }
    EXPECT_LT(std::sqrt(num / std::max(den, 1e-16)), 1e-3);
  }
}

TEST(SampleObjective, MatchesBatchOfOne) {
  loss::LossConfig cfg;
  cfg.total_steps = 10;
  ad::Graph g;
  const auto score = g.constant(Tensor::scalar(0.7));
  const auto mu = g.constant(Tensor::matrix(2, 2, {0.1, -0.4, 0.9, 0.0}));
  const auto logvar = g.constant(Tensor::matrix(2, 2, {0.0, 0.5, -1.0, 0.2}));
  const auto attention = Tensor::matrix(2, 4, {0.1, 0.6, 0.2, 0.1, 0.0, 0.1, 0.2, 0.7});
  const double beta = loss::beta_schedule(3, cfg);
  const auto obj = loss::sample_objective(score, 0.4, mu, logvar, g.constant(attention), beta, cfg.gamma, cfg, true);

  loss::SampleOutputs s;
  s.prediction = 0.7;
  s.target = 0.4;
  s.attention = attention;
  for (std::size_t k = 0; k < 2; ++k) {
    stochastic::GaussianEmbedding e;
    for (std::size_t j = 0; j < 2; ++j) {
      e.mu.push_back(mu.value().at(k, j));
      e.sigma.push_back(std::exp(0.5 * logvar.value().at(k, j)));
    }
    s.embeddings.push_back(e);
  }
  const auto b = loss::total_loss(std::vector<loss::SampleOutputs>{s}, 3, cfg, true);
  EXPECT_NEAR(obj.total.value().item(), b.total, 1e-9);
  EXPECT_NEAR(obj.mse, b.mse, 1e-12);
  EXPECT_NEAR(*obj.kl, *b.kl, 1e-9);
}

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "rica/error.hpp"
#include "rica/metrics.hpp"
#include "rica/rng.hpp"

using namespace rica;
using metrics::EvalRecord;

namespace {

// Pearson of average ranks, both computed the slow way.
double srcc_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double tau_a_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  double balance = 0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      balance += (s > 0) - (s < 0);
    }
  }
  return balance / (static_cast<double>(n * (n - 1)) / 2);
}

std::vector<EvalRecord> records_with(const std::vector<double>& uncertainty, const std::vector<double>& error) {
  std::vector<EvalRecord> r(uncertainty.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i].sample_id = "s" + std::to_string(1000 + i);
    r[i].truth = 0.5;
    r[i].predicted = 0.5 + error[i];
    r[i].uncertainty = uncertainty[i];
  }
  return r;
}

}  // namespace

TEST(Srcc, Examples) {
  const std::vector<double> a = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(metrics::spearman_srcc(a, a), 1.0);
  EXPECT_DOUBLE_EQ(metrics::spearman_srcc(a, std::vector<double>{4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(metrics::spearman_srcc(std::vector<double>{1, 2, 3}, std::vector<double>{3, 1, 2}), -0.5, 1e-15);
  EXPECT_THROW(metrics::spearman_srcc(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  EXPECT_THROW(metrics::spearman_srcc(a, std::vector<double>{2, 2, 2, 2}), DomainError);
}

TEST(Srcc, AverageRanksForTies) {
  EXPECT_EQ(metrics::average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Srcc, MatchesOracleAndMonotoneInvariance) {
  rng::Stream st(rng::Key(41));
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(st.integer(2, 60));
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = trial % 2 ? static_cast<double>(st.integer(0, 5)) : st.normal();
      y[i] = trial % 2 ? static_cast<double>(st.integer(0, 5)) : st.normal();
    }
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end() ||
        std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) {
      continue;
    }
    const double s = metrics::spearman_srcc(x, y);
    EXPECT_NEAR(s, srcc_oracle(x, y), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    auto fx = x;
    for (auto& v : fx) v = std::exp(0.3 * v) - 7;
    EXPECT_NEAR(metrics::spearman_srcc(fx, y), s, 1e-12);
    EXPECT_NEAR(metrics::kendall_tau(x, y), tau_a_oracle(x, y), 1e-12);
  }
}

TEST(RelativeL2, Examples) {
  const std::vector<double> t = {1, 4, 7};
  EXPECT_EQ(metrics::relative_l2(t, t, 0, 10), 0.0);
  EXPECT_DOUBLE_EQ(metrics::relative_l2(std::vector<double>{2, 3, 8}, t, 0, 10), 1.0);
  EXPECT_THROW(metrics::relative_l2(t, t, 5, 5), ContractError);
  // Affine transform of scores and range together.
  const std::vector<double> p = {1.5, 3.0, 9.0};
  std::vector<double> p2, t2;
  for (double v : p) p2.push_back(3 * v + 2);
  for (double v : t) t2.push_back(3 * v + 2);
  EXPECT_NEAR(metrics::relative_l2(p2, t2, 2, 32), metrics::relative_l2(p, t, 0, 10), 1e-12);
}

TEST(Calibration, ConstantErrorAndIndexErrors) {
  std::vector<double> u(23), e(23, 0.25);
  std::iota(u.begin(), u.end(), 0.0);
  for (double m : metrics::calibration_curve(records_with(u, e))) EXPECT_DOUBLE_EQ(m, 0.25);

  std::vector<double> u10 = {0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 1.0};
  std::vector<double> e10(10);
  for (std::size_t i = 0; i < 10; ++i) e10[i] = std::round(u10[i] * 10);  // rank after sorting
  const auto curve = metrics::calibration_curve(records_with(u10, e10));
  for (std::size_t b = 0; b < 10; ++b) EXPECT_NEAR(curve[b], static_cast<double>(b + 1), 1e-12);
  EXPECT_DOUBLE_EQ(metrics::kendall_tau(curve), 1.0);
}

TEST(Calibration, RemainderGoesToFirstBins) {
  std::vector<double> u(23), e(23, 0.0);
  std::iota(u.begin(), u.end(), 0.0);
  const auto bins = metrics::calibration_bins(records_with(u, e));
  for (std::size_t b = 0; b < 10; ++b) EXPECT_EQ(bins[b].count, b < 3 ? 3u : 2u);
}

TEST(Calibration, TiesBrokenBySampleId) {
  std::vector<double> u(10, 1.0), e(10);
  std::iota(e.begin(), e.end(), 0.0);
  auto r = records_with(u, e);
  std::reverse(r.begin(), r.end());
  const auto curve = metrics::calibration_curve(r);
  for (std::size_t b = 0; b < 10; ++b) EXPECT_DOUBLE_EQ(curve[b], static_cast<double>(b));
}

TEST(Calibration, Errors) {
  std::vector<double> u(9, 1.0), e(9, 0.0);
  EXPECT_THROW(metrics::calibration_curve(records_with(u, e)), ContractError);
  auto r = records_with(std::vector<double>(12, 1.0), std::vector<double>(12, 0.0));
  r[4].uncertainty.reset();
  EXPECT_THROW(metrics::calibration_curve(r), ContractError);
}

TEST(Calibration, MonotoneErrorGivesTauOne) {
  rng::Stream st(rng::Key(42));
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<std::size_t>(st.integer(10, 200));
    std::vector<double> u(n), e(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = st.uniform(0, 5) + 1e-6 * static_cast<double>(i);
      e[i] = 0.1 * u[i] * u[i] + 0.01;
    }
    EXPECT_DOUBLE_EQ(metrics::kendall_tau(metrics::calibration_curve(records_with(u, e))), 1.0);
  }
}

TEST(KendallTau, Examples) {
  std::vector<double> inc(10);
  std::iota(inc.begin(), inc.end(), 0.0);
  EXPECT_DOUBLE_EQ(metrics::kendall_tau(inc), 1.0);
  std::vector<double> dec(inc.rbegin(), inc.rend());
  EXPECT_DOUBLE_EQ(metrics::kendall_tau(dec), -1.0);
  // Three adjacent swaps: 42 concordant, 3 discordant.
  std::vector<double> v = {1, 0, 3, 2, 5, 4, 6, 7, 8, 9};
  EXPECT_NEAR(metrics::kendall_tau(v), 39.0 / 45.0, 1e-15);
  // Table values are multiples of 1/45.
  EXPECT_NEAR(29.0 / 45.0, 0.6444, 5e-5);
}

TEST(Pointing, HitsMissesAndChance) {
  EvalRecord r;
  r.clips = 10;
  r.peaks = {3, 7};
  r.intervals = {{2, 4}, {4, 6}};
  const std::vector<EvalRecord> one = {r};
  EXPECT_DOUBLE_EQ(metrics::pointing_game_accuracy(one), 0.5);
  EXPECT_DOUBLE_EQ(metrics::pointing_game_chance(one), 6.0 / 20.0);
  auto bad = r;
  bad.intervals[1] = {4, 11};
  EXPECT_THROW(metrics::pointing_game_accuracy(std::vector<EvalRecord>{bad}), DataError);
  bad.intervals[1] = {0, 3};
  EXPECT_THROW(metrics::pointing_game_accuracy(std::vector<EvalRecord>{bad}), DataError);
}

TEST(Pointing, PeaksAreFirstArgmax) {
  const std::vector<double> a = {0.1, 0.5, 0.4, 0.3, 0.3, 0.2};
  EXPECT_EQ(metrics::attention_peaks(a, 2, 3), (std::vector<std::size_t>{2, 1}));
}

TEST(RecordsCsv, RoundTrip) {
  std::vector<EvalRecord> r(3);
  r[0] = {"a", 0.125, 0.5, 0.75, {1, 3}, {{1, 2}, {3, 4}}, 4};
  r[1] = {"b", -1.0 / 3.0, 0.1, std::nullopt, {}, {}, 0};
  r[2] = {"c", 1e-17, 0.9, 2.0, {5}, {{5, 5}}, 6};
  const auto path = std::filesystem::temp_directory_path() / "rica_records.csv";
  metrics::write_records_csv(path, r);
  EXPECT_EQ(metrics::read_records_csv(path), r);
  std::filesystem::remove(path);
}

TEST(CalibrationCsv, RoundTripAndHeader) {
  metrics::CalibrationTable t;
  for (std::size_t b = 0; b < 10; ++b) t.bins[b] = {0.1 * static_cast<double>(b), 0.05 * static_cast<double>(b), 3};
  t.kendall_tau = 1.0;
  const auto path = std::filesystem::temp_directory_path() / "rica_calibration.csv";
  metrics::write_calibration_csv(path, t);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first.rfind("# kendall_tau=", 0), 0u);
  const auto back = metrics::read_calibration_csv(path);
  EXPECT_EQ(back.kendall_tau, 1.0);
  for (std::size_t b = 0; b < 10; ++b) {
    EXPECT_EQ(back.bins[b].mean_uncertainty, t.bins[b].mean_uncertainty);
    EXPECT_EQ(back.bins[b].mae, t.bins[b].mae);
  }
  std::filesystem::remove(path);
}

TEST(Report, DeterministicRecordsHaveNoTau) {
  std::vector<EvalRecord> r(12);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i].sample_id = std::to_string(i);
    r[i].truth = static_cast<double>(i);
    r[i].predicted = static_cast<double>(i) + 0.5;
  }
  const auto rep = metrics::compute_report(r, 0, 11);
  EXPECT_EQ(rep.n, 12u);
  EXPECT_DOUBLE_EQ(rep.srcc, 1.0);
  EXPECT_FALSE(rep.kendall_tau.has_value());
  EXPECT_FALSE(rep.bin_mae.has_value());
  EXPECT_FALSE(rep.pointing_accuracy.has_value());
}

#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rica/acceptance.hpp"
#include "rica/error.hpp"

using namespace rica;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json fixture() {
  std::ifstream in(fs::path(RICA_SOURCE_DIR) / "bench" / "thresholds.json");
  return json::parse(in);
}

}  // namespace

TEST(Fixture, PinsTheCriteriaThresholds) {
  const auto j = fixture();
  EXPECT_EQ(bench::default_thresholds_path(), fs::path(RICA_SOURCE_DIR) / "bench" / "thresholds.json");

  const auto& g = j.at("gradient_correctness");
  EXPECT_EQ(g.at("trials"), 100);
  EXPECT_EQ(g.at("primitive_rel_error_max"), 1e-4);
  EXPECT_EQ(g.at("model_rel_error_max"), 1e-3);
  EXPECT_EQ(g.at("max_seconds"), 60);

  const auto& c = j.at("closed_form_oracles");
  EXPECT_EQ(c.at("abs_tol"), 1e-9);
  EXPECT_EQ(c.at("kl_mc_samples"), 100000);
  EXPECT_EQ(c.at("kl_mc_rel_tol"), 0.02);

  const auto& m = j.at("metric_oracles");
  EXPECT_EQ(m.at("trials"), 1000);
  EXPECT_EQ(m.at("max_n"), 100);
  EXPECT_EQ(m.at("tau_pairs"), 45);

  EXPECT_EQ(j.at("dag_determinism").at("topologies"), 50);

  const auto& o = j.at("overfit");
  EXPECT_EQ(o.at("data").at("n_train"), 4);
  EXPECT_EQ(o.at("epochs"), 500);
  EXPECT_EQ(o.at("train_mse_max"), 1e-3);
  EXPECT_EQ(o.at("srcc_min"), 1.0);
  EXPECT_EQ(o.at("max_seconds"), 120);

  const auto& r = j.at("synthetic_recovery");
  const auto& d = r.at("data");
  EXPECT_EQ(d.at("n_train"), 500);
  EXPECT_EQ(d.at("n_test"), 150);
  EXPECT_EQ(d.at("clips"), 24);
  EXPECT_EQ(d.at("d_feat"), 32);
  EXPECT_EQ(d.at("k_min"), 2);
  EXPECT_EQ(d.at("k_max"), 5);
  EXPECT_EQ(d.at("eta_min"), 0.05);
  EXPECT_EQ(d.at("eta_max"), 0.5);
  EXPECT_EQ(d.at("seed"), 7);
  EXPECT_EQ(r.at("run_seeds").size(), 3u);
  EXPECT_EQ(r.at("srcc_min"), 0.85);
  EXPECT_EQ(r.at("tau_min"), 0.3);
  EXPECT_EQ(r.at("max_seconds"), 1800);

  EXPECT_EQ(j.at("mode_tradeoff").at("rl2_ratio_max"), 1.1);

  const auto& a = j.at("inference_averaging");
  EXPECT_EQ(a.at("keys"), 200);
  EXPECT_EQ(a.at("n_low"), 1);
  EXPECT_EQ(a.at("n_high"), 20);
  EXPECT_EQ(a.at("ratio_min"), 3.5);
  EXPECT_EQ(a.at("ratio_max"), 5.5);

  EXPECT_EQ(j.at("localization").at("gamma"), 0.1);
  EXPECT_EQ(j.at("localization").at("margin_min"), 0.15);

  std::set<int> ids;
  for (const auto& [name, section] : j.items()) ids.insert(section.at("id").get<int>());
  EXPECT_EQ(ids.size(), bench::kCriterionCount);
  EXPECT_EQ(*ids.begin(), 1);
  EXPECT_EQ(*ids.rbegin(), 10);
}

TEST(Suite, ParseAndNames) {
  EXPECT_EQ(bench::parse_suite("fast"), bench::Suite::kFast);
  EXPECT_EQ(bench::parse_suite("full"), bench::Suite::kFull);
  EXPECT_THROW(bench::parse_suite("quick"), ConfigError);
  EXPECT_EQ(bench::status_name(bench::Status::kPass), "PASS");
  EXPECT_EQ(bench::status_name(bench::Status::kFail), "FAIL");
  EXPECT_EQ(bench::status_name(bench::Status::kNotRun), "SKIP");
}

TEST(Report, SkippedCriteriaDoNotFailButFailuresDo) {
  bench::AcceptanceReport r;
  r.criteria = {{1, "a", bench::Status::kPass, 0.5, "< 1", "", 0.1},
                {2, "b", bench::Status::kNotRun, std::nullopt, "", "full suite only", 0.0}};
  EXPECT_TRUE(r.all_passed());
  r.criteria.push_back({3, "c", bench::Status::kFail, 2.0, "< 1", "", 0.1});
  EXPECT_FALSE(r.all_passed());

  const auto j = json::parse(bench::report_to_json(r));
  EXPECT_EQ(j.at("all_passed"), false);
  EXPECT_EQ(j.at("criteria").size(), 3u);
  EXPECT_EQ(j.at("criteria")[1].at("status"), "SKIP");
  EXPECT_TRUE(j.at("criteria")[1].at("measured").is_null());

  const auto line = bench::summary_line(r.criteria[0]);
  EXPECT_EQ(line.rfind("PASS  [1] a", 0), 0u) << line;
  EXPECT_NE(line.find("threshold: < 1"), std::string::npos) << line;
}

TEST(Harness, FastSuiteListsEveryCriterionOnce) {
  // Shrunk trial counts keep this a smoke test; the real fixture runs under ctest as acceptance_fast.
  auto j = fixture();
  j["gradient_correctness"]["trials"] = 2;
  j["closed_form_oracles"]["kl_mc_samples"] = 2000;
  j["closed_form_oracles"]["kl_mc_rel_tol"] = 0.5;
  j["closed_form_oracles"]["kl_mc_trials"] = 2;
  j["metric_oracles"]["trials"] = 20;
  j["dag_determinism"]["topologies"] = 5;
  j["overfit"]["epochs"] = 5;
  j["reproducibility"]["epochs"] = 2;
  j["reproducibility"]["resume_after"] = 1;

  const auto dir = fs::temp_directory_path() / "rica_fixture_smoke";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "thresholds.json") << j.dump();

  bench::AcceptanceOptions opt;
  opt.suite = bench::Suite::kFast;
  opt.thresholds_path = dir / "thresholds.json";
  opt.work_dir = dir / "work";
  const auto report = bench::run_acceptance(opt);

  ASSERT_EQ(report.criteria.size(), bench::kCriterionCount);
  for (std::size_t i = 0; i < report.criteria.size(); ++i) {
    const auto& c = report.criteria[i];
    EXPECT_EQ(c.id, i + 1);
    EXPECT_FALSE(c.name.empty());
    const bool full_only = c.id == 6 || c.id == 7 || c.id == 9;
    EXPECT_EQ(c.status == bench::Status::kNotRun, full_only) << c.id;
    EXPECT_EQ(c.detail.find("crashed"), std::string::npos) << bench::summary_line(c);
  }
  // The overfit criterion is the only one the shrunk budget is expected to miss.
  for (const auto& c : report.criteria) {
    if (c.id != 5 && c.status != bench::Status::kNotRun) {
      EXPECT_EQ(bench::status_name(c.status), "PASS") << bench::summary_line(c);
    }
  }
  fs::remove_all(dir);
}

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Acceptance harness: runs each acceptance criterion and reports measured
// value, threshold, verdict and wall-clock time.
namespace rica::bench {

enum class Suite { kFast, kFull };
Suite parse_suite(const std::string& name);  // "fast" | "full"; ConfigError otherwise
std::string suite_name(Suite s);

inline constexpr std::size_t kCriterionCount = 10;

// The fixture with every threshold; compiled in so the CLI works from any cwd.
std::filesystem::path default_thresholds_path();

struct AcceptanceOptions {
  Suite suite = Suite::kFast;
  std::filesystem::path thresholds_path = default_thresholds_path();
  std::filesystem::path work_dir;  // empty: a directory under the system temp dir
  std::ostream* log = nullptr;     // progress lines; nullptr is silent
};

enum class Status { kPass, kFail, kNotRun };
std::string status_name(Status s);

struct CriterionResult {
  std::size_t id = 0;
  std::string name;
  Status status = Status::kNotRun;
  std::optional<double> measured;
  std::string threshold;  // quoted from the fixture, e.g. "< 0.0001"
  std::string detail;     // secondary measurements or the crash diagnostic
  double seconds = 0.0;
};

struct AcceptanceReport {
  Suite suite = Suite::kFast;
  std::vector<CriterionResult> criteria;  // ids 1..kCriterionCount, each once

  // Every criterion the suite ran passed.
  bool all_passed() const;
};

// A criterion that throws is reported as failed and the run continues.
AcceptanceReport run_acceptance(const AcceptanceOptions& options);

std::string report_to_json(const AcceptanceReport& report);
// "PASS  [1] gradient correctness  measured=... threshold ...  (1.2 s)"
std::string summary_line(const CriterionResult& c);

}  // namespace rica::bench

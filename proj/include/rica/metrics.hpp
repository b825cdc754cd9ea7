#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rica::metrics {

inline constexpr std::size_t kCalibrationBins = 10;

struct Interval {
  std::size_t start = 0;  // 1-indexed, inclusive
  std::size_t end = 0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct EvalRecord {
  std::string sample_id;
  double predicted = 0.0;
  double truth = 0.0;
  std::optional<double> uncertainty;
  std::vector<std::size_t> peaks;   // per step, 1-indexed clip
  std::vector<Interval> intervals;  // per step
  std::size_t clips = 0;            // T, needed to validate intervals

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct MetricsReport {
  std::size_t n = 0;
  double srcc = 0.0;
  double r_l2 = 0.0;
  std::optional<std::array<double, kCalibrationBins>> bin_mae;
  std::optional<double> kendall_tau;
  std::optional<double> pointing_accuracy;
  std::optional<double> pointing_chance;
};

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

double pearson(std::span<const double> x, std::span<const double> y);

// Throws ContractError when n < 2, DomainError when either input is constant.
double spearman_srcc(std::span<const double> pred, std::span<const double> truth);

// (100/N) sum (|pred - truth| / (y_max - y_min))^2.
double relative_l2(std::span<const double> pred, std::span<const double> truth, double y_min,
                   double y_max);

struct CalibrationBin {
  double mean_uncertainty = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

// Records sorted by (uncertainty, sample id) and split into 10 contiguous bins;
// the remainder of n / 10 goes to the first bins.
std::array<CalibrationBin, kCalibrationBins> calibration_bins(std::span<const EvalRecord> records);
std::array<double, kCalibrationBins> calibration_curve(std::span<const EvalRecord> records);

// Kendall tau-a between index and value, O(n log n).
double kendall_tau(std::span<const double> values);
// Kendall tau-a between two sequences, O(n log n).
double kendall_tau(std::span<const double> x, std::span<const double> y);

// Fraction of (sample, step) pairs whose peak falls in the annotated interval.
double pointing_game_accuracy(std::span<const EvalRecord> records);

// Accuracy of a uniformly random peak: sum of interval lengths / sum of T,
// taken over all (sample, step) pairs.
double pointing_game_chance(std::span<const EvalRecord> records);

// First argmax per row, 1-indexed.
std::vector<std::size_t> attention_peaks(std::span<const double> attention, std::size_t rows,
                                         std::size_t cols);

MetricsReport compute_report(std::span<const EvalRecord> records, double y_min, double y_max);

// CSV: sample_id,predicted,truth,uncertainty,clips,peaks,intervals
// peaks are ';'-separated; intervals are 's-e' joined by ';'; empty fields are absent.
void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path);

std::string report_to_json(const MetricsReport& report);

// Calibration CSV: a "# kendall_tau=<v>" comment line, then
// bin,mean_uncertainty,mae with bins numbered 1..10.
struct CalibrationTable {
  std::array<CalibrationBin, kCalibrationBins> bins{};
  double kendall_tau = 0.0;
};
void write_calibration_csv(const std::filesystem::path& path, const CalibrationTable& table);
CalibrationTable read_calibration_csv(const std::filesystem::path& path);

}  // namespace rica::metrics

#include "rica/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rica/error.hpp"

namespace rica::metrics {
namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number '" + s + "'");
  }
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError(where + ": bad index '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

// Merge sort on `y`, counting inversions (strict y[i] > y[j] with i before j).
std::uint64_t merge_count(std::vector<double>& y, std::vector<double>& buf, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(y, buf, lo, mid) + merge_count(y, buf, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += mid - i;
      buf[k++] = y[j++];
    } else {
      buf[k++] = y[i++];
    }
  }
  while (i < mid) buf[k++] = y[i++];
  while (j < hi) buf[k++] = y[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// Pairs tied within runs of equal values in a sorted sequence.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq equal) {
  std::uint64_t pairs = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      pairs += static_cast<std::uint64_t>(run) * (run - 1) / 2;
      run = 1;
    }
  }
  return pairs;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x, y, "pearson");
  if (x.size() < 2) throw ContractError("pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman_srcc(std::span<const double> pred, std::span<const double> truth) {
  require_same_length(pred, truth, "spearman_srcc");
  if (pred.size() < 2) throw ContractError("spearman_srcc needs at least two points");
  const auto rp = average_ranks(pred);
  const auto rt = average_ranks(truth);
  return pearson(rp, rt);
}

double relative_l2(std::span<const double> pred, std::span<const double> truth, double y_min,
                   double y_max) {
  require_same_length(pred, truth, "relative_l2");
  if (pred.empty()) throw ContractError("relative_l2: empty input");
  if (!(y_max > y_min)) throw ContractError("relative_l2: degenerate label range");
  const double range = y_max - y_min;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = std::fabs(pred[i] - truth[i]) / range;
    s += e * e;
  }
  return 100.0 * s / static_cast<double>(pred.size());
}

std::array<CalibrationBin, kCalibrationBins> calibration_bins(std::span<const EvalRecord> records) {
  if (records.size() < kCalibrationBins) {
    throw ContractError("calibration needs at least " + std::to_string(kCalibrationBins) +
                        " records, got " + std::to_string(records.size()));
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& r : records) {
    if (!r.uncertainty) throw ContractError("calibration: record '" + r.sample_id + "' has no uncertainty");
  }
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (*ra.uncertainty != *rb.uncertainty) return *ra.uncertainty < *rb.uncertainty;
    return ra.sample_id < rb.sample_id;
  });
  std::array<CalibrationBin, kCalibrationBins> bins{};
  const std::size_t base = records.size() / kCalibrationBins;
  const std::size_t extra = records.size() % kCalibrationBins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < kCalibrationBins; ++b) {
    const std::size_t count = base + (b < extra ? 1 : 0);
    double err = 0.0;
    double unc = 0.0;
    for (std::size_t i = pos; i < pos + count; ++i) {
      const auto& r = records[order[i]];
      err += std::fabs(r.predicted - r.truth);
      unc += *r.uncertainty;
    }
    bins[b] = {unc / static_cast<double>(count), err / static_cast<double>(count), count};
    pos += count;
  }
  return bins;
}

std::array<double, kCalibrationBins> calibration_curve(std::span<const EvalRecord> records) {
  const auto bins = calibration_bins(records);
  std::array<double, kCalibrationBins> mae{};
  for (std::size_t b = 0; b < kCalibrationBins; ++b) mae[b] = bins[b].mae;
  return mae;
}

double kendall_tau(std::span<const double> values) {
  std::vector<double> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0.0);
  return kendall_tau(idx, values);
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  require_same_length(x, y, "kendall_tau");
  const std::size_t n = x.size();
  if (n < 2) throw ContractError("kendall_tau needs at least two points");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  const auto x_ties = tied_pairs(n, [&](auto a, auto b) { return xs[a] == xs[b]; });
  const auto joint_ties =
      tied_pairs(n, [&](auto a, auto b) { return xs[a] == xs[b] && ys[a] == ys[b]; });
  std::vector<double> buf(n);
  const auto swaps = merge_count(ys, buf, 0, n);
  const auto y_ties = tied_pairs(n, [&](auto a, auto b) { return ys[a] == ys[b]; });
  const auto total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  // concordant - discordant
  const auto diff = static_cast<double>(total) - static_cast<double>(x_ties) -
                    static_cast<double>(y_ties) + static_cast<double>(joint_ties) -
                    2.0 * static_cast<double>(swaps);
  return diff / static_cast<double>(total);
}

std::vector<std::size_t> attention_peaks(std::span<const double> attention, std::size_t rows,
                                         std::size_t cols) {
  if (attention.size() != rows * cols) throw DimensionError("attention_peaks: shape mismatch");
  std::vector<std::size_t> peaks(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = attention.subspan(r * cols, cols);
    peaks[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) + 1;
  }
  return peaks;
}

namespace {

void check_pointing_record(const EvalRecord& r) {
  if (r.peaks.size() != r.intervals.size() || r.peaks.empty()) {
    throw DataError("pointing game: record '" + r.sample_id + "' needs one peak per interval");
  }
  for (const auto& iv : r.intervals) {
    if (iv.start < 1 || iv.end < iv.start || (r.clips != 0 && iv.end > r.clips)) {
      throw DataError("pointing game: record '" + r.sample_id + "' has interval " +
                      std::to_string(iv.start) + "-" + std::to_string(iv.end) + " outside [1," +
                      std::to_string(r.clips) + "]");
    }
  }
}

}  // namespace

double pointing_game_accuracy(std::span<const EvalRecord> records) {
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const auto& r : records) {
    check_pointing_record(r);
    for (std::size_t s = 0; s < r.peaks.size(); ++s) {
      hits += r.peaks[s] >= r.intervals[s].start && r.peaks[s] <= r.intervals[s].end;
      ++total;
    }
  }
  if (total == 0) throw ContractError("pointing game: no records");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double pointing_game_chance(std::span<const EvalRecord> records) {
  double covered = 0.0;
  double span_total = 0.0;
  for (const auto& r : records) {
    check_pointing_record(r);
    if (r.clips == 0) throw ContractError("pointing game chance needs the clip count");
    for (const auto& iv : r.intervals) {
      covered += static_cast<double>(iv.end - iv.start + 1);
      span_total += static_cast<double>(r.clips);
    }
  }
  if (span_total == 0.0) throw ContractError("pointing game: no records");
  return covered / span_total;
}

MetricsReport compute_report(std::span<const EvalRecord> records, double y_min, double y_max) {
  MetricsReport rep;
  rep.n = records.size();
  std::vector<double> pred;
  std::vector<double> truth;
  for (const auto& r : records) {
    pred.push_back(r.predicted);
    truth.push_back(r.truth);
  }
  rep.srcc = spearman_srcc(pred, truth);
  rep.r_l2 = relative_l2(pred, truth, y_min, y_max);
  const bool has_unc = !records.empty() && std::all_of(records.begin(), records.end(),
                                                       [](const auto& r) { return r.uncertainty.has_value(); });
  if (has_unc && records.size() >= kCalibrationBins) {
    rep.bin_mae = calibration_curve(records);
    rep.kendall_tau = kendall_tau(*rep.bin_mae);
  }
  const bool has_pointing = !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) {
    return !r.peaks.empty() && !r.intervals.empty();
  });
  if (has_pointing) {
    rep.pointing_accuracy = pointing_game_accuracy(records);
    rep.pointing_chance = pointing_game_chance(records);
  }
  return rep;
}

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "sample_id,predicted,truth,uncertainty,clips,peaks,intervals\n";
  for (const auto& r : records) {
    if (r.sample_id.find_first_of(",\n\r") != std::string::npos) {
      throw DataError("sample id '" + r.sample_id + "' cannot be written to CSV");
    }
    out << r.sample_id << ',' << format_double(r.predicted) << ',' << format_double(r.truth) << ',';
    if (r.uncertainty) out << format_double(*r.uncertainty);
    out << ',' << r.clips << ',';
    for (std::size_t i = 0; i < r.peaks.size(); ++i) out << (i ? ";" : "") << r.peaks[i];
    out << ',';
    for (std::size_t i = 0; i < r.intervals.size(); ++i) {
      out << (i ? ";" : "") << r.intervals[i].start << '-' << r.intervals[i].end;
    }
    out << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<EvalRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,predicted,truth,uncertainty,clips,peaks,intervals") {
    throw FormatError(path.string() + ": unexpected CSV header");
  }
  std::vector<EvalRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError(where + ": expected 7 fields");
    EvalRecord r;
    r.sample_id = f[0];
    r.predicted = parse_double(f[1], where);
    r.truth = parse_double(f[2], where);
    if (!f[3].empty()) r.uncertainty = parse_double(f[3], where);
    r.clips = parse_index(f[4], where);
    if (!f[5].empty()) {
      for (const auto& p : split(f[5], ';')) r.peaks.push_back(parse_index(p, where));
    }
    if (!f[6].empty()) {
      for (const auto& iv : split(f[6], ';')) {
        const auto se = split(iv, '-');
        if (se.size() != 2) throw FormatError(where + ": bad interval '" + iv + "'");
        r.intervals.push_back({parse_index(se[0], where), parse_index(se[1], where)});
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["n"] = report.n;
  j["srcc"] = report.srcc;
  j["r_l2"] = report.r_l2;
  j["bin_mae"] = report.bin_mae ? nlohmann::ordered_json(*report.bin_mae) : nlohmann::ordered_json();
  j["kendall_tau"] = report.kendall_tau ? nlohmann::ordered_json(*report.kendall_tau) : nlohmann::ordered_json();
  j["pointing_accuracy"] =
      report.pointing_accuracy ? nlohmann::ordered_json(*report.pointing_accuracy) : nlohmann::ordered_json();
  j["pointing_chance"] =
      report.pointing_chance ? nlohmann::ordered_json(*report.pointing_chance) : nlohmann::ordered_json();
  return j.dump(2);
}

void write_calibration_csv(const std::filesystem::path& path, const CalibrationTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "# kendall_tau=" << format_double(table.kendall_tau) << '\n';
  out << "bin,mean_uncertainty,mae\n";
  for (std::size_t b = 0; b < kCalibrationBins; ++b) {
    out << b + 1 << ',' << format_double(table.bins[b].mean_uncertainty) << ','
        << format_double(table.bins[b].mae) << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

CalibrationTable read_calibration_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  CalibrationTable table;
  std::string line;
  const std::string prefix = "# kendall_tau=";
  if (!std::getline(in, line) || line.rfind(prefix, 0) != 0) {
    throw FormatError(path.string() + ": missing kendall_tau comment");
  }
  table.kendall_tau = parse_double(line.substr(prefix.size()), path.string());
  if (!std::getline(in, line) || line != "bin,mean_uncertainty,mae") {
    throw FormatError(path.string() + ": unexpected calibration header");
  }
  for (std::size_t b = 0; b < kCalibrationBins; ++b) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": expected 10 bins");
    const auto f = split(line, ',');
    if (f.size() != 3 || parse_index(f[0], path.string()) != b + 1) {
      throw FormatError(path.string() + ": bad bin row '" + line + "'");
    }
    table.bins[b].mean_uncertainty = parse_double(f[1], path.string());
    table.bins[b].mae = parse_double(f[2], path.string());
  }
  while (std::getline(in, line)) {
    if (!line.empty()) throw FormatError(path.string() + ": trailing rows after 10 bins");
  }
  return table;
}

}  // namespace rica::metrics

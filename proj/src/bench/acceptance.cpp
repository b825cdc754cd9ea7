#include "rica/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rica/data.hpp"
#include "rica/engine.hpp"
#include "rica/error.hpp"
#include "rica/gradcheck.hpp"
#include "rica/losses.hpp"
#include "rica/metrics.hpp"
#include "rica/model.hpp"
#include "rica/rng.hpp"
#include "rica/rubric.hpp"
#include "rica/stochastic.hpp"

#ifndef RICA_THRESHOLDS_PATH
#define RICA_THRESHOLDS_PATH "bench/thresholds.json"
#endif

namespace rica::bench {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

data::GeneratorConfig generator_from(const json& j) {
  return data::generator_config_from_json(j.dump());
}

// Everything shared between the criteria of one run.
struct Context {
  json thresholds;
  std::filesystem::path work_dir;
  std::ostream* log = nullptr;

  const json& section(const char* name) const { return thresholds.at(name); }
  void say(const std::string& line) const {
    if (log) *log << line << std::endl;
  }
};

struct Outcome {
  bool passed = false;
  double measured = 0.0;
  std::string threshold;
  std::string detail;
};

// ---- 1: gradients ---------------------------------------------------------

Outcome gradient_correctness(const Context& ctx) {
  const auto& t = ctx.section("gradient_correctness");
  const auto trials = t.at("trials").get<std::size_t>();
  const auto seed = t.at("seed").get<std::uint64_t>();
  const double prim_max = t.at("primitive_rel_error_max").get<double>();
  const double model_max = t.at("model_rel_error_max").get<double>();
  const double max_seconds = t.at("max_seconds").get<double>();
  const auto t0 = Clock::now();

  double prim_worst = 0.0;
  std::string worst_name;
  for (const auto& r : gradcheck::check_primitives(trials, seed)) {
    if (r.max_relative_error >= prim_worst) {
      prim_worst = r.max_relative_error;
      worst_name = r.name;
    }
  }
  double model_worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) model_worst = std::max(model_worst, gradcheck::check_model(seed + i));
  const double secs = seconds_since(t0);

  Outcome o;
  o.measured = std::max(prim_worst, model_worst);
  o.passed = prim_worst < prim_max && model_worst < model_max && secs < max_seconds;
  o.threshold = "primitives < " + fmt(prim_max) + ", model < " + fmt(model_max) + ", < " + fmt(max_seconds) + " s";
  o.detail = "primitive max " + fmt(prim_worst) + " (" + worst_name + "), model max " + fmt(model_worst) +
             ", " + fmt(secs) + " s";
  return o;
}

// ---- 2: closed-form oracles -----------------------------------------------

Outcome closed_form_oracles(const Context& ctx) {
  const auto& t = ctx.section("closed_form_oracles");
  const double tol = t.at("abs_tol").get<double>();
  const auto mc_samples = t.at("kl_mc_samples").get<std::size_t>();
  const double mc_tol = t.at("kl_mc_rel_tol").get<double>();
  const auto mc_trials = t.at("kl_mc_trials").get<std::size_t>();
  const auto seed = t.at("seed").get<std::uint64_t>();

  struct Check {
    const char* what;
    double got;
    double want;
  };
  const double e = std::exp(1.0);
  auto one_row = [](std::vector<double> v) {
    const std::size_t n = v.size();  // not inline: argument order is unspecified
    return Tensor({1, n}, std::move(v));
  };
  const std::vector<std::vector<double>> half = {{0.5, 0.5}};
  const std::vector<std::vector<double>> mixed = {{1.0, 0.5}};
  const std::vector<std::vector<double>> two = {{0.5, 0.5}, {0.5, 0.5}};
  const std::vector<double> zero{0.0}, one{1.0}, two_d{2.0}, d13{1.0, 3.0}, p2{0.0, 0.0};
  const std::vector<Check> checks = {
      {"kl mu=0 sigma=1", stochastic::kl_standard_normal({{0, 0, 0}, {1, 1, 1}}), 0.0},
      {"kl mu=1 sigma=1", stochastic::kl_standard_normal({{1}, {1}}), 0.5},
      {"kl sigma^2=e", stochastic::kl_standard_normal({{0}, {std::sqrt(e)}}), (e - 2) / 2},
      {"uncertainty (0.5,0.5)", stochastic::uncertainty(half), 0.5},
      {"uncertainty (1,0.5)", stochastic::uncertainty(mixed), 2.0 / 3.0},
      {"uncertainty two steps", stochastic::uncertainty(two), 1.0},
      {"center one-hot t=5", loss::attention_centers(one_row({0, 0, 0, 0, 1, 0}))[0], 5.0},
      {"center uniform T=4", loss::attention_centers(one_row({.25, .25, .25, .25}))[0], 2.5},
      {"center (0.5,0,0.5)", loss::attention_centers(one_row({.5, 0, .5}))[0], 2.0},
      {"sparsity one-hot", loss::sparsity_loss(Tensor({2, 3}, {0, 1, 0, 1, 0, 0})), 0.0},
      {"sparsity uniform T=2", loss::sparsity_loss(one_row({.5, .5})), 0.5},
      {"ranking (2,5,8)", loss::ranking_loss(std::vector<double>{2, 5, 8}, 10, 1.0), 0.0},
      {"ranking (5,2)", loss::ranking_loss(std::vector<double>{5, 2}, 10, 1.0), 4.0},
      {"ranking single", loss::ranking_loss(std::vector<double>{5}, 10, 1.0), 0.0},
      {"mse equal", loss::mse_loss(d13, d13, 1.0), 0.0},
      {"mse |d|=2", loss::mse_loss(zero, two_d, 1.0), 4.0},
      {"mse (1,3) sigma=2", loss::mse_loss(p2, d13, 2.0), 1.25},
  };
  double worst = 0.0;
  std::string worst_what = "none";
  for (const auto& c : checks) {
    const double err = std::fabs(c.got - c.want);
    if (err > worst) {
      worst = err;
      worst_what = c.what;
    }
  }

  // Monte-Carlo KL: E_q[log q(z) - log p(z)] with z = mu + sigma * eps.
  double mc_worst = 0.0;
  for (std::size_t trial = 0; trial < mc_trials; ++trial) {
    rng::Stream st(rng::Key(seed).derive({trial}));
    const std::size_t d = 4;
    stochastic::GaussianEmbedding g;
    for (std::size_t j = 0; j < d; ++j) {
      g.mu.push_back(st.normal());
      g.sigma.push_back(st.uniform(0.3, 3.0));
    }
    const rng::Key noise = rng::Key(seed).derive({trial, 1});
    double acc = 0.0;
    for (std::size_t s = 0; s < mc_samples; ++s) {
      double log_ratio = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double eps = noise.normal(s * d + j);
        const double z = g.mu[j] + g.sigma[j] * eps;
        log_ratio += -std::log(g.sigma[j]) - 0.5 * eps * eps + 0.5 * z * z;
      }
      acc += log_ratio;
    }
    const double mc = acc / static_cast<double>(mc_samples);
    const double exact = stochastic::kl_standard_normal(g);
    mc_worst = std::max(mc_worst, std::fabs(mc - exact) / exact);
  }

  Outcome o;
  o.measured = worst;
  o.passed = worst <= tol && mc_worst < mc_tol;
  o.threshold = "|error| <= " + fmt(tol) + ", Monte-Carlo KL within " + fmt(100 * mc_tol) + "%";
  o.detail = std::to_string(checks.size()) + " examples, worst '" + worst_what + "'; Monte-Carlo KL worst " +
             fmt(100 * mc_worst) + "% over " + std::to_string(mc_trials) + " embeddings";
  return o;
}

// ---- 3: metric oracles ----------------------------------------------------

std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) below += 1.0;
      if (j != i && x[j] == x[i]) equal += 1.0;
    }
    r[i] = 1.0 + below + 0.5 * equal;
  }
  return r;
}

double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = brute_ranks(a);
  const auto rb = brute_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// concordant - discordant, over all pairs.
long long brute_pair_balance(const std::vector<double>& x, const std::vector<double>& y) {
  long long s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double p = (x[i] - x[j]) * (y[i] - y[j]);
      s += p > 0 ? 1 : (p < 0 ? -1 : 0);
    }
  }
  return s;
}

std::vector<double> random_vector(rng::Stream& st, std::size_t n) {
  std::vector<double> v(n);
  // Half the vectors are small integers so that ties are common.
  const bool ties = st.uniform() < 0.5;
  for (auto& x : v) x = ties ? static_cast<double>(st.integer(0, static_cast<std::int64_t>(n / 2))) : st.normal();
  return v;
}

bool constant(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

Outcome metric_oracles(const Context& ctx) {
  const auto& t = ctx.section("metric_oracles");
  const auto trials = t.at("trials").get<std::size_t>();
  const auto max_n = t.at("max_n").get<std::int64_t>();
  const double srcc_tol = t.at("srcc_abs_tol").get<double>();
  const auto bins = t.at("tau_bins").get<std::size_t>();
  const auto pairs = t.at("tau_pairs").get<double>();
  const auto seed = t.at("seed").get<std::uint64_t>();

  double srcc_worst = 0.0;
  std::size_t tau_mismatch = 0;
  std::size_t grid_miss = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    rng::Stream st(rng::Key(seed).derive({trial}));
    const auto n = static_cast<std::size_t>(st.integer(2, max_n));
    auto x = random_vector(st, n);
    auto y = random_vector(st, n);
    while (constant(x)) x = random_vector(st, n);
    while (constant(y)) y = random_vector(st, n);

    srcc_worst = std::max(srcc_worst, std::fabs(metrics::spearman_srcc(x, y) - brute_spearman(x, y)));
    const double total = static_cast<double>(n * (n - 1) / 2);
    if (metrics::kendall_tau(x, y) != static_cast<double>(brute_pair_balance(x, y)) / total) ++tau_mismatch;

    std::vector<double> mae(bins);
    for (auto& m : mae) m = st.uniform() < 0.3 ? std::round(4 * st.uniform()) : st.uniform();
    const double scaled = metrics::kendall_tau(mae) * pairs;
    if (std::fabs(scaled - std::round(scaled)) > 1e-9) ++grid_miss;
  }

  Outcome o;
  o.measured = srcc_worst;
  o.passed = srcc_worst <= srcc_tol && tau_mismatch == 0 && grid_miss == 0;
  o.threshold = "SRCC |diff| <= " + fmt(srcc_tol) + ", tau exact, 10-bin tau on the 1/" + fmt(pairs) + " grid";
  o.detail = std::to_string(trials) + " trials; tau mismatches " + std::to_string(tau_mismatch) +
             ", off-grid taus " + std::to_string(grid_miss);
  return o;
}

// ---- 4: DAG determinism ---------------------------------------------------

rubric::RubricSpec random_rubric(rng::Stream& st) {
  rubric::RubricSpec spec;
  const auto n = static_cast<std::uint32_t>(st.integer(1, 8));
  for (std::uint32_t i = 0; i < n; ++i) spec.step_types.push_back({i, "s" + std::to_string(i)});
  // Random stages over a random subset of the types.
  std::vector<std::uint32_t> pool;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (st.uniform() < 0.7) pool.push_back(i);
  }
  while (!pool.empty()) {
    const auto take = static_cast<std::size_t>(st.integer(1, static_cast<std::int64_t>(pool.size())));
    rubric::Stage stage{"g" + std::to_string(spec.stages.size()), {}};
    stage.members.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    spec.stages.push_back(std::move(stage));
  }
  return spec;
}

Outcome dag_determinism(const Context& ctx) {
  const auto& t = ctx.section("dag_determinism");
  const auto topologies = t.at("topologies").get<std::size_t>();
  const auto seed = t.at("seed").get<std::uint64_t>();

  model::ModelConfig mc;
  mc.aggregation = model::Aggregation::kSum;
  const auto sum_params = model::init_model(mc, seed);
  mc.aggregation = model::Aggregation::kMean;
  const auto mean_params = model::init_model(mc, seed);

  std::size_t mismatches = 0;
  std::size_t max_nodes = 0;
  for (std::size_t i = 0; i < topologies; ++i) {
    rng::Stream st(rng::Key(seed).derive({i}));
    const auto spec = random_rubric(st);
    std::vector<std::uint32_t> steps;
    for (const auto& s : spec.step_types) {
      if (st.uniform() < 0.6) steps.push_back(s.id);
    }
    if (steps.empty()) steps.push_back(spec.step_types.front().id);
    const auto dag = rubric::build_dag(spec, steps);
    max_nodes = std::max(max_nodes, dag.nodes().size());
    const auto leaves = stochastic::standard_normal(rng::Key(seed).derive({i, 1}), steps.size(), mc.d_model);

    for (const auto* params : {&mean_params, &sum_params}) {
      std::vector<Tensor> roots;
      for (int rep = 0; rep < 2; ++rep) {
        ad::Graph g;
        model::Bound b(g, *params);
        roots.push_back(model::propagate_scores(b, dag, g.constant(leaves)).value());
      }
      const auto& a = roots[0].data();
      const auto& c = roots[1].data();
      if (a.size() != c.size() || std::memcmp(a.data(), c.data(), a.size() * sizeof(double)) != 0) ++mismatches;
    }
  }
  Outcome o;
  o.measured = static_cast<double>(mismatches);
  o.passed = mismatches == 0;
  o.threshold = "0 differing roots over " + std::to_string(topologies) + " topologies";
  o.detail = "mean and sum pooling; largest DAG " + std::to_string(max_nodes) + " nodes";
  return o;
}

// ---- 5: overfit -----------------------------------------------------------

engine::Dataset make_dataset(const Context& ctx, const data::GeneratorConfig& gen, const std::string& name,
                             const model::ModelConfig& model) {
  const auto dir = ctx.work_dir / name;
  std::filesystem::remove_all(dir);
  data::generate_dataset(gen, dir);
  return engine::load_dataset(dir / "manifest.json", {}, model);
}

double records_mse(const std::vector<metrics::EvalRecord>& records) {
  double s = 0.0;
  for (const auto& r : records) s += (r.predicted - r.truth) * (r.predicted - r.truth);
  return s / static_cast<double>(records.size());
}

Outcome overfit(const Context& ctx) {
  const auto& t = ctx.section("overfit");
  const double mse_max = t.at("train_mse_max").get<double>();
  const double srcc_min = t.at("srcc_min").get<double>();
  const double max_seconds = t.at("max_seconds").get<double>();
  const auto t0 = Clock::now();

  engine::RunConfig cfg;
  cfg.mode = model::Mode::kDeterministic;
  cfg.optimizer.epochs = t.at("epochs").get<std::size_t>();
  cfg.seed = t.at("seed").get<std::uint64_t>();
  cfg.out_dir = ctx.work_dir / "overfit_run";
  const auto ds = make_dataset(ctx, generator_from(t.at("data")), "overfit_data", cfg.model);
  cfg.manifest = ctx.work_dir / "overfit_data" / "manifest.json";

  const double s2 = cfg.loss.output_sigma * cfg.loss.output_sigma;
  std::optional<std::size_t> first_epoch;
  engine::TrainOptions opt;
  opt.write_files = false;
  opt.on_epoch = [&](const engine::EpochLog& log) {
    if (!first_epoch && log.loss.mse * s2 < mse_max) first_epoch = log.epoch;
  };
  const auto res = engine::train(cfg, ds, opt);
  const auto ev = engine::evaluate(res.checkpoint, ds.train);
  const double mse = records_mse(ev.records);
  const double secs = seconds_since(t0);

  Outcome o;
  o.measured = mse;
  o.passed = mse < mse_max && ev.report.srcc >= srcc_min && secs < max_seconds;
  o.threshold = "train MSE < " + fmt(mse_max) + ", SRCC = " + fmt(srcc_min) + ", < " + fmt(max_seconds) + " s";
  o.detail = std::to_string(ds.train.size()) + " samples, SRCC " + fmt(ev.report.srcc) + ", first epoch under " +
             (first_epoch ? std::to_string(*first_epoch) : std::string("never")) + ", " + fmt(secs) + " s";
  return o;
}

// ---- 6, 7, 9: training on the synthetic benchmark --------------------------

struct BenchmarkRun {
  std::uint64_t seed = 0;
  model::Mode mode = model::Mode::kStochastic;
  engine::Checkpoint checkpoint;
  engine::EvalResult test;
  std::optional<double> calibration_tau;
  std::filesystem::path calibration_csv;
  double seconds = 0.0;
};

struct Benchmark {
  std::optional<engine::Dataset> ds;
  std::filesystem::path manifest;
  std::vector<BenchmarkRun> stochastic;
  std::optional<BenchmarkRun> deterministic;
  double data_seconds = 0.0;
};

BenchmarkRun benchmark_run(const Context& ctx, const Benchmark& b, model::Mode mode, std::uint64_t seed) {
  const auto t0 = Clock::now();
  BenchmarkRun run;
  run.seed = seed;
  run.mode = mode;
  engine::RunConfig cfg;  // defaults
  cfg.manifest = b.manifest;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.out_dir = ctx.work_dir / ("bench_" + engine::mode_name(mode) + "_seed" + std::to_string(seed));
  std::filesystem::remove_all(cfg.out_dir);

  engine::TrainOptions opt;
  opt.on_epoch = [&](const engine::EpochLog& log) {
    if ((log.epoch + 1) % 25 == 0) {
      ctx.say("    " + engine::mode_name(mode) + " seed " + std::to_string(seed) + " epoch " +
              std::to_string(log.epoch + 1) + "  mse " + fmt(log.loss.mse) + "  total " + fmt(log.loss.total));
    }
  };
  auto res = engine::train(cfg, *b.ds, opt);
  run.checkpoint = std::move(res.checkpoint);
  run.test = engine::evaluate(run.checkpoint, b.ds->test, cfg.threads);
  run.calibration_csv = cfg.out_dir / "calibration_test.csv";
  try {
    run.calibration_tau = engine::export_calibration(run.checkpoint, run.test.records, run.calibration_csv);
  } catch (const ConfigError&) {
    // Deterministic checkpoints have no uncertainty; criterion 7 checks this.
  }
  run.seconds = seconds_since(t0);
  ctx.say("    " + engine::mode_name(mode) + " seed " + std::to_string(seed) + ": test SRCC " +
          fmt(run.test.report.srcc) + ", R-l2 " + fmt(run.test.report.r_l2) +
          (run.calibration_tau ? ", tau " + fmt(*run.calibration_tau) : std::string()) + " (" + fmt(run.seconds) +
          " s)");
  return run;
}

void ensure_benchmark_data(const Context& ctx, Benchmark& b) {
  if (b.ds) return;
  const auto t0 = Clock::now();
  const auto& t = ctx.section("synthetic_recovery");
  b.ds = make_dataset(ctx, generator_from(t.at("data")), "bench_data", engine::RunConfig{}.model);
  b.manifest = ctx.work_dir / "bench_data" / "manifest.json";
  b.data_seconds = seconds_since(t0);
}

Outcome synthetic_recovery(const Context& ctx, Benchmark& b) {
  const auto& t = ctx.section("synthetic_recovery");
  const double srcc_min = t.at("srcc_min").get<double>();
  const double tau_min = t.at("tau_min").get<double>();
  const double max_seconds = t.at("max_seconds").get<double>();
  const auto t0 = Clock::now();
  ensure_benchmark_data(ctx, b);
  for (auto seed : t.at("run_seeds").get<std::vector<std::uint64_t>>()) {
    b.stochastic.push_back(benchmark_run(ctx, b, model::Mode::kStochastic, seed));
  }
  const double secs = seconds_since(t0);

  std::vector<double> srcc, tau;
  std::string per_seed;
  for (const auto& r : b.stochastic) {
    srcc.push_back(r.test.report.srcc);
    tau.push_back(r.calibration_tau.value_or(-1.0));
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(r.seed) + ": SRCC " +
                fmt(srcc.back()) + " tau " + fmt(tau.back());
  }
  Outcome o;
  o.measured = median(srcc);
  o.passed = median(srcc) >= srcc_min && median(tau) >= tau_min && secs < max_seconds;
  o.threshold = "median SRCC >= " + fmt(srcc_min) + ", median tau >= " + fmt(tau_min) + ", < " +
                fmt(max_seconds) + " s";
  o.detail = "median tau " + fmt(median(tau)) + " (" + per_seed + "), " + fmt(secs) + " s";
  return o;
}

Outcome mode_tradeoff(const Context& ctx, Benchmark& b) {
  const auto& t = ctx.section("mode_tradeoff");
  const double ratio_max = t.at("rl2_ratio_max").get<double>();
  ensure_benchmark_data(ctx, b);
  const auto seed = ctx.section("synthetic_recovery").at("run_seeds").at(0).get<std::uint64_t>();
  if (b.stochastic.empty()) b.stochastic.push_back(benchmark_run(ctx, b, model::Mode::kStochastic, seed));
  b.deterministic = benchmark_run(ctx, b, model::Mode::kDeterministic, seed);

  const auto& stoch = b.stochastic.front();
  const auto& det = *b.deterministic;
  const double ratio = det.test.report.r_l2 / stoch.test.report.r_l2;
  const bool contract = stoch.calibration_tau.has_value() && std::filesystem::exists(stoch.calibration_csv) &&
                        !det.calibration_tau.has_value() && !std::filesystem::exists(det.calibration_csv);
  Outcome o;
  o.measured = ratio;
  o.passed = ratio <= ratio_max && contract;
  o.threshold = "deterministic R-l2 / stochastic R-l2 <= " + fmt(ratio_max) + ", calibration from stochastic only";
  o.detail = "R-l2 deterministic " + fmt(det.test.report.r_l2) + " vs stochastic " + fmt(stoch.test.report.r_l2) +
             " (seed " + std::to_string(seed) + "); calibration contract " + (contract ? "held" : "violated");
  return o;
}

Outcome localization(const Context& ctx, Benchmark& b) {
  const auto& t = ctx.section("localization");
  const double gamma = t.at("gamma").get<double>();
  const double margin = t.at("margin_min").get<double>();
  ensure_benchmark_data(ctx, b);
  const auto seed = ctx.section("synthetic_recovery").at("run_seeds").at(0).get<std::uint64_t>();
  if (b.stochastic.empty()) b.stochastic.push_back(benchmark_run(ctx, b, model::Mode::kStochastic, seed));
  const auto& run = b.stochastic.front();
  if (run.checkpoint.config.loss.gamma != gamma) {
    throw ConfigError("benchmark run used gamma " + fmt(run.checkpoint.config.loss.gamma) + ", expected " +
                      fmt(gamma));
  }
  const double acc = metrics::pointing_game_accuracy(run.test.records);
  const double chance = metrics::pointing_game_chance(run.test.records);
  Outcome o;
  o.measured = acc - chance;
  o.passed = acc - chance >= margin;
  o.threshold = "accuracy - chance >= " + fmt(margin);
  o.detail = "pointing " + fmt(acc) + " vs chance " + fmt(chance) + " (seed " + std::to_string(seed) + ", gamma " +
             fmt(gamma) + ")";
  return o;
}

// ---- 8: inference averaging -----------------------------------------------

Outcome inference_averaging(const Context& ctx) {
  const auto& t = ctx.section("inference_averaging");
  const auto keys = t.at("keys").get<std::size_t>();
  const auto n_low = t.at("n_low").get<std::size_t>();
  const auto n_high = t.at("n_high").get<std::size_t>();
  const double lo = t.at("ratio_min").get<double>();
  const double hi = t.at("ratio_max").get<double>();
  const auto seed = t.at("seed").get<std::uint64_t>();

  const model::ModelConfig mc;
  const auto params = model::init_model(mc, seed);
  data::GeneratorConfig gen;
  gen.seed = seed;
  const auto sample = data::generate_sample(gen, 0, "probe");
  const auto spec = data::default_rubric(gen.step_types);
  const auto dag = rubric::build_dag(spec, sample.steps);
  const auto features = sample.features.to_tensor();
  const auto descriptors = data::step_descriptors(sample.steps, gen.d_text, gen.seed);

  auto spread = [&](std::size_t n) {
    std::vector<double> scores;
    for (std::size_t k = 0; k < keys; ++k) {
      model::ForwardOptions fo;
      fo.mode = model::Mode::kStochastic;
      fo.n_samples = n;
      fo.key = rng::Key(seed).derive({n, k});
      scores.push_back(model::forward(params, features, descriptors, dag, fo).score);
    }
    return stddev(scores);
  };
  const double s_low = spread(n_low);
  const double s_high = spread(n_high);
  const double ratio = s_low / s_high;
  Outcome o;
  o.measured = ratio;
  o.passed = ratio >= lo && ratio <= hi;
  o.threshold = "std(n=" + std::to_string(n_low) + ") / std(n=" + std::to_string(n_high) + ") in [" + fmt(lo) +
                ", " + fmt(hi) + "]";
  o.detail = "std " + fmt(s_low) + " vs " + fmt(s_high) + " over " + std::to_string(keys) + " keys; sqrt(" +
             std::to_string(n_high / n_low) + ") = " + fmt(std::sqrt(static_cast<double>(n_high) / n_low));
  return o;
}

// ---- 10: reproducibility --------------------------------------------------

Outcome reproducibility(const Context& ctx) {
  const auto& t = ctx.section("reproducibility");
  const auto split_at = t.at("resume_after").get<std::size_t>();

  engine::RunConfig cfg;
  const auto gen = generator_from(t.at("data"));
  cfg.model.d_feat = gen.d_feat;
  cfg.model.d_text = gen.d_text;
  cfg.model.max_clips = gen.clips;
  cfg.model.d_model = t.at("d_model").get<std::size_t>();
  cfg.model.aggregator_hidden = cfg.model.decoder_hidden = cfg.model.d_model;
  cfg.optimizer.epochs = t.at("epochs").get<std::size_t>();
  cfg.optimizer.batch_size = t.at("batch_size").get<std::size_t>();
  cfg.optimizer.warmup_epochs = 1;
  cfg.seed = t.at("seed").get<std::uint64_t>();
  cfg.threads = t.at("threads").get<std::size_t>();
  cfg.out_dir = ctx.work_dir / "repro_run";
  const auto ds = make_dataset(ctx, gen, "repro_data", cfg.model);
  cfg.manifest = ctx.work_dir / "repro_data" / "manifest.json";
  const auto ckpt = cfg.out_dir / "checkpoint.rack";

  // The out dir is part of the config, so every run reuses it.
  auto fresh_run = [&](std::optional<std::size_t> stop) {
    std::filesystem::remove_all(cfg.out_dir);
    engine::TrainOptions opt;
    opt.stop_after = stop;
    engine::train(cfg, ds, opt);
    return read_bytes(ckpt);
  };
  const auto a = fresh_run(std::nullopt);
  const auto b = fresh_run(std::nullopt);
  fresh_run(split_at);
  engine::TrainOptions resume;
  resume.resume = ckpt;
  engine::train(cfg, ds, resume);
  const auto c = read_bytes(ckpt);

  const bool same = a == b;
  const bool resumed = a == c;
  Outcome o;
  o.measured = static_cast<double>(!same) + static_cast<double>(!resumed);
  o.passed = same && resumed;
  o.threshold = "repeat and resumed checkpoints byte-identical";
  o.detail = std::to_string(a.size()) + "-byte checkpoint; repeat " + (same ? "identical" : "DIFFERS") +
             ", resume after epoch " + std::to_string(split_at) + " " + (resumed ? "identical" : "DIFFERS");
  return o;
}

const char* criterion_name(std::size_t id) {
  static const char* names[kCriterionCount] = {
      "gradient correctness", "closed-form oracles",        "metric oracles",
      "DAG determinism",      "overfit sanity",             "synthetic recovery",
      "mode trade-off",       "inference averaging",        "auxiliary-loss localization",
      "reproducibility",
  };
  return names[id - 1];
}

bool in_fast_suite(std::size_t id) { return id != 6 && id != 7 && id != 9; }

}  // namespace

Suite parse_suite(const std::string& name) {
  if (name == "fast") return Suite::kFast;
  if (name == "full") return Suite::kFull;
  throw ConfigError("unknown suite '" + name + "' (expected fast or full)");
}

std::string suite_name(Suite s) { return s == Suite::kFast ? "fast" : "full"; }

std::filesystem::path default_thresholds_path() { return RICA_THRESHOLDS_PATH; }

std::string status_name(Status s) {
  switch (s) {
    case Status::kPass: return "PASS";
    case Status::kFail: return "FAIL";
    case Status::kNotRun: return "SKIP";
  }
  return "?";
}

bool AcceptanceReport::all_passed() const {
  return std::none_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.status == Status::kFail; });
}

AcceptanceReport run_acceptance(const AcceptanceOptions& options) {
  Context ctx;
  {
    std::ifstream in(options.thresholds_path);
    if (!in) throw ConfigError("cannot open thresholds fixture " + options.thresholds_path.string());
    try {
      ctx.thresholds = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("thresholds fixture: " + std::string(e.what()));
    }
  }
  ctx.work_dir = options.work_dir.empty()
                     ? std::filesystem::temp_directory_path() / ("rica-accept-" + suite_name(options.suite))
                     : options.work_dir;
  std::filesystem::create_directories(ctx.work_dir);
  ctx.log = options.log;

  AcceptanceReport report;
  report.suite = options.suite;
  Benchmark bench;
  for (std::size_t id = 1; id <= kCriterionCount; ++id) {
    CriterionResult c;
    c.id = id;
    c.name = criterion_name(id);
    if (options.suite == Suite::kFast && !in_fast_suite(id)) {
      c.detail = "full suite only";
      report.criteria.push_back(c);
      continue;
    }
    ctx.say("[" + std::to_string(id) + "] " + c.name + " ...");
    const auto t0 = Clock::now();
    try {
      Outcome o;
      switch (id) {
        case 1: o = gradient_correctness(ctx); break;
        case 2: o = closed_form_oracles(ctx); break;
        case 3: o = metric_oracles(ctx); break;
        case 4: o = dag_determinism(ctx); break;
        case 5: o = overfit(ctx); break;
        case 6: o = synthetic_recovery(ctx, bench); break;
        case 7: o = mode_tradeoff(ctx, bench); break;
        case 8: o = inference_averaging(ctx); break;
        case 9: o = localization(ctx, bench); break;
        case 10: o = reproducibility(ctx); break;
      }
      c.status = o.passed ? Status::kPass : Status::kFail;
      c.measured = o.measured;
      c.threshold = o.threshold;
      c.detail = o.detail;
    } catch (const std::exception& e) {
      c.status = Status::kFail;
      c.detail = std::string("crashed: ") + e.what();
    }
    c.seconds = seconds_since(t0);
    ctx.say(summary_line(c));
    report.criteria.push_back(c);
  }
  return report;
}

std::string summary_line(const CriterionResult& c) {
  std::ostringstream os;
  os << status_name(c.status) << "  [" << c.id << "] " << c.name;
  if (c.status == Status::kNotRun) {
    os << "  (" << c.detail << ")";
    return os.str();
  }
  os << "  measured=" << (c.measured ? fmt(*c.measured) : std::string("n/a")) << "  threshold: " << c.threshold
     << "  (" << fmt(c.seconds) << " s)";
  if (!c.detail.empty()) os << "  -- " << c.detail;
  return os.str();
}

std::string report_to_json(const AcceptanceReport& report) {
  nlohmann::ordered_json j;
  j["suite"] = suite_name(report.suite);
  j["all_passed"] = report.all_passed();
  auto& arr = j["criteria"] = nlohmann::ordered_json::array();
  for (const auto& c : report.criteria) {
    nlohmann::ordered_json e;
    e["id"] = c.id;
    e["name"] = c.name;
    e["status"] = status_name(c.status);
    e["passed"] = c.status == Status::kPass;
    e["measured"] = c.measured ? nlohmann::ordered_json(*c.measured) : nlohmann::ordered_json();
    e["threshold"] = c.threshold;
    e["seconds"] = c.seconds;
    e["detail"] = c.detail;
    arr.push_back(e);
  }
  return j.dump(2);
}

}  // namespace rica::bench

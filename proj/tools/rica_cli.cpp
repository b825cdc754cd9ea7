// Command-line front end: gen-data, train, eval, predict, calibration, accept.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rica/acceptance.hpp"
#include "rica/data.hpp"
#include "rica/engine.hpp"
#include "rica/error.hpp"

namespace {

using namespace rica;

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_gen_data(const std::string& config, const std::string& out_override, std::size_t threads) {
  const std::filesystem::path cfg_path(config);
  auto cfg = data::generator_config_from_json(read_text(cfg_path));
  std::filesystem::path out = out_override.empty() ? std::filesystem::path(cfg.out_dir) : std::filesystem::path(out_override);
  if (out_override.empty() && out.is_relative()) out = cfg_path.parent_path() / out;
  const auto m = data::generate_dataset(cfg, out, threads);
  std::printf("wrote %zu train + %zu test samples to %s (labels %.6g..%.6g)\n", m.train.size(), m.test.size(),
              out.string().c_str(), m.label_min, m.label_max);
  return 0;
}

int cmd_train(const std::string& config, const std::string& resume, std::size_t stop_after) {
  const auto cfg = engine::load_run_config(config);
  engine::TrainOptions opt;
  if (!resume.empty()) opt.resume = resume;
  if (stop_after > 0) opt.stop_after = stop_after;
  opt.on_epoch = [](const engine::EpochLog& log) {
    std::printf("epoch %4zu  total %.6f  mse %.6f", log.epoch, log.loss.total, log.loss.mse);
    if (log.loss.kl) std::printf("  kl %.4f  beta %.3g", *log.loss.kl, log.loss.beta_used);
    std::printf("  sparsity %.4f  ranking %.4f  (%.1fs)\n", log.loss.sparsity, log.loss.ranking, log.seconds);
    std::fflush(stdout);
  };
  const auto res = engine::train(cfg, opt);
  std::printf("checkpoint: %s (epoch %zu)\n", (cfg.out_dir / "checkpoint.rack").string().c_str(),
              res.checkpoint.epoch);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split, const std::string& manifest,
             const std::string& out_dir) {
  const auto ck = engine::load_checkpoint(ckpt_path);
  const auto res = engine::evaluate(ck, split, manifest.empty() ? std::nullopt : std::optional<std::filesystem::path>(manifest));
  const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(ckpt_path).parent_path() : std::filesystem::path(out_dir);
  if (!dir.empty()) std::filesystem::create_directories(dir);
  metrics::write_records_csv(dir / ("eval_" + split + ".csv"), res.records);
  const auto json = metrics::report_to_json(res.report);
  std::ofstream(dir / ("metrics_" + split + ".json")) << json << '\n';
  std::cout << json << '\n';
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& sample_path) {
  const auto ck = engine::load_checkpoint(ckpt_path);
  engine::Dataset ds;
  ds.manifest = ck.manifest;
  ds.rubric = ck.rubric;
  const auto s = engine::prepare_sample(data::load_sample(sample_path), ds, ck.config.model);
  const auto p = engine::predict(ck, s);
  std::printf("sample: %s\n", p.sample_id.c_str());
  std::printf("score (normalised): %.9g\n", p.normalised);
  std::printf("score: %.9g\n", p.denormalised);
  if (p.uncertainty) {
    std::printf("uncertainty: %.9g\n", *p.uncertainty);
  } else {
    std::printf("uncertainty: n/a (deterministic)\n");
  }
  std::printf("centers:");
  for (double c : p.centers) std::printf(" %.4f", c);
  std::printf("\npeaks:");
  for (auto pk : p.peaks) std::printf(" %zu", pk);
  std::printf("\n");
  return 0;
}

int cmd_calibration(const std::string& ckpt_path, const std::string& split, const std::string& manifest,
                    const std::string& out) {
  const auto ck = engine::load_checkpoint(ckpt_path);
  if (ck.config.mode != model::Mode::kStochastic) {
    throw ConfigError("calibration export needs a stochastic checkpoint; deterministic mode has no uncertainty");
  }
  const auto res = engine::evaluate(ck, split, manifest.empty() ? std::nullopt : std::optional<std::filesystem::path>(manifest));
  const double tau = engine::export_calibration(ck, res.records, out);
  std::printf("kendall_tau=%.6f -> %s\n", tau, out.c_str());
  return 0;
}

int cmd_accept(const std::string& suite, const std::string& out, const std::string& thresholds,
               const std::string& work_dir) {
  bench::AcceptanceOptions opt;
  opt.suite = bench::parse_suite(suite);
  if (!thresholds.empty()) opt.thresholds_path = thresholds;
  if (!work_dir.empty()) opt.work_dir = work_dir;
  opt.log = &std::cout;
  const auto report = bench::run_acceptance(opt);
  if (!out.empty()) std::ofstream(out) << bench::report_to_json(report) << '\n';
  return report.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rubric-DAG action quality assessment with stochastic step embeddings"};
  app.require_subcommand(1);

  std::string config, out, resume, ckpt, split = "test", manifest, sample, suite = "fast", thresholds, work_dir;
  std::size_t stop_after = 0;
  std::size_t threads = 1;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Generator config (JSON)")->required();
  gen->add_option("--out", out, "Output directory (overrides out_dir)");
  gen->add_option("--threads", threads, "Worker threads");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run config (JSON)")->required();
  tr->add_option("--resume", resume, "Continue from a checkpoint");
  tr->add_option("--stop-after", stop_after, "Stop after this many completed epochs");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--manifest", manifest, "Manifest (defaults to the one used for training)");
  ev->add_option("--out-dir", out, "Directory for eval CSV and metrics JSON");

  auto* pr = app.add_subcommand("predict", "Score one sample file");
  pr->add_option("--ckpt", ckpt, "Checkpoint")->required();
  pr->add_option("--sample", sample, "Sample file")->required();

  auto* cal = app.add_subcommand("calibration", "Export the uncertainty calibration curve");
  cal->add_option("--ckpt", ckpt, "Checkpoint")->required();
  cal->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  cal->add_option("--manifest", manifest, "Manifest (defaults to the one used for training)");
  cal->add_option("--out", out, "Output CSV")->required();

  auto* acc = app.add_subcommand("accept", "Run the acceptance suite");
  acc->add_option("--suite", suite, "fast or full")->check(CLI::IsMember({"fast", "full"}));
  acc->add_option("--out", out, "JSON report path");
  acc->add_option("--thresholds", thresholds, "Thresholds fixture (JSON)");
  acc->add_option("--work-dir", work_dir, "Scratch directory for generated data and runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, threads);
    if (*tr) return cmd_train(config, resume, stop_after);
    if (*ev) return cmd_eval(ckpt, split, manifest, out);
    if (*pr) return cmd_predict(ckpt, sample);
    if (*cal) return cmd_calibration(ckpt, split, manifest, out);
    if (*acc) return cmd_accept(suite, out, thresholds, work_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

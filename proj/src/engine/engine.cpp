#include "rica/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "rica/error.hpp"
#include "rica/rng.hpp"

namespace rica::engine {
namespace {

constexpr std::uint64_t kShuffleLabel = rng::hash_name("shuffle");
constexpr std::uint64_t kTrainNoiseLabel = rng::hash_name("train-noise");
constexpr std::uint64_t kInferenceLabel = rng::hash_name("inference");

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are
// rethrown on the caller, lowest index first.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<double> group_rates(const model::ParameterSet& ps, const OptimizerConfig& o, double scale) {
  std::vector<double> rates(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    switch (ps.group(i)) {
      case model::ParamGroup::kEncoder: rates[i] = o.lr_encoder * scale; break;
      case model::ParamGroup::kAttention: rates[i] = o.lr_attention * scale; break;
      case model::ParamGroup::kHead: rates[i] = o.lr_head * scale; break;
    }
  }
  return rates;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Stream st(rng::Key(seed).derive({kShuffleLabel, epoch}));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(st.integer(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct SampleStep {
  std::vector<Tensor> grads;
  loss::SampleObjective objective;
  double total = 0.0;
};

}  // namespace

const std::vector<LoadedSample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

LoadedSample prepare_sample(data::SyntheticSample sample, const Dataset& ds, const model::ModelConfig& model) {
  if (sample.features.dim != model.d_feat) {
    throw ConfigError("sample '" + sample.id() + "' has feature width " + std::to_string(sample.features.dim) +
                      " but the model expects " + std::to_string(model.d_feat));
  }
  if (model.position_encoding && sample.clips() > model.max_clips) {
    throw ConfigError("sample '" + sample.id() + "' has " + std::to_string(sample.clips()) +
                      " clips, above max_clips " + std::to_string(model.max_clips));
  }
  for (auto s : sample.steps) {
    if (!ds.rubric.has_step(s)) {
      throw ConfigError("sample '" + sample.id() + "' uses step type " + std::to_string(s) +
                        " which is not in the rubric spec");
    }
  }
  LoadedSample out;
  out.features = sample.features.to_tensor();
  out.descriptors = data::step_descriptors(sample.steps, model.d_text, ds.manifest.seed);
  out.dag = rubric::build_dag(ds.rubric, sample.steps);
  out.target = data::training_target(sample, ds.manifest, ds.rubric.difficulty_multiplier);
  out.truth = data::normalise_label(sample.label, ds.manifest.label_min, ds.manifest.label_max);
  out.sample = std::move(sample);
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& rubric_override,
                     const model::ModelConfig& model, const std::vector<std::string>& splits) {
  Dataset ds;
  ds.manifest = data::load_manifest(manifest_path);
  ds.rubric = rubric::load_rubric_spec(rubric_override.empty() ? ds.manifest.resolve(ds.manifest.rubric_spec)
                                                               : rubric_override);
  for (const auto& name : splits) {
    auto& dst = name == "train" ? ds.train : ds.test;
    for (const auto& p : ds.manifest.split(name)) {
      dst.push_back(prepare_sample(data::load_sample(ds.manifest.resolve(p)), ds, model));
    }
  }
  return ds;
}

double warmup_factor(std::uint64_t step, std::uint64_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup_steps);
}

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return (n_train + batch_size - 1) / batch_size;
}

std::string epoch_log_to_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["step"] = log.step;
  j["lr_scale"] = log.lr_scale;
  j["mse"] = log.loss.mse;
  j["kl"] = log.loss.kl ? nlohmann::ordered_json(*log.loss.kl) : nlohmann::ordered_json();
  j["sparsity"] = log.loss.sparsity;
  j["ranking"] = log.loss.ranking;
  j["total"] = log.loss.total;
  j["beta_used"] = log.loss.beta_used;
  j["gamma_used"] = log.loss.gamma_used;
  j["seconds"] = log.seconds;
  return j.dump();
}

TrainResult train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.check();
  const auto ds = load_dataset(cfg.manifest, cfg.rubric_spec, cfg.model, {"train"});
  return train(cfg, ds, options);
}

TrainResult train(const RunConfig& cfg, const Dataset& ds, const TrainOptions& options) {
  cfg.check();
  const auto& samples = ds.train;
  if (samples.empty()) throw ConfigError("training split is empty");
  const auto& o = cfg.optimizer;
  const std::size_t spe = steps_per_epoch(samples.size(), o.batch_size);
  loss::LossConfig lcfg = cfg.loss;
  lcfg.total_steps = static_cast<std::uint64_t>(o.epochs) * spe;
  const std::uint64_t warmup_steps = static_cast<std::uint64_t>(o.warmup_epochs) * spe;
  const bool stochastic = cfg.mode == model::Mode::kStochastic;
  const bool use_aux = ds.rubric.ordered_steps && lcfg.gamma > 0.0;

  TrainResult result;
  auto& ck = result.checkpoint;
  if (options.resume) {
    ck = load_checkpoint(*options.resume);
    if (!(ck.config == cfg)) throw ConfigError("resume: checkpoint was written with a different run config");
    if (!(ck.rubric == ds.rubric)) throw ConfigError("resume: rubric spec differs from the checkpoint");
    if (ck.optimizer.step != ck.epoch * spe) throw FormatError("resume: checkpoint step does not match its epoch");
  } else {
    ck.config = cfg;
    ck.params = model::init_model(cfg.model, cfg.seed);
    ck.optimizer.hyper = {o.lr_head, o.beta1, o.beta2, o.eps, o.weight_decay};
    ck.optimizer.storage = optim::Storage::kFloat32;
    ck.optimizer.reset(ck.params.params.values());
  }
  ck.rubric = ds.rubric;
  ck.manifest = ds.manifest;

  std::ofstream log_file;
  if (options.write_files) {
    std::filesystem::create_directories(cfg.out_dir);
    log_file.open(cfg.out_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw FormatError("cannot write " + (cfg.out_dir / "train_log.jsonl").string());
  }

  auto& params = ck.params;
  for (std::size_t epoch = ck.epoch; epoch < o.epochs; ++epoch) {
    if (options.stop_after && epoch >= *options.stop_after) break;
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(samples.size(), cfg.seed, epoch);
    double sum_mse = 0.0, sum_kl = 0.0, sum_beta_kl = 0.0, sum_sp = 0.0, sum_rk = 0.0, sum_total = 0.0;
    double last_beta = 0.0;
    double lr_scale = 0.0;

    for (std::size_t b = 0; b < spe; ++b) {
      const std::uint64_t step = ck.optimizer.step;
      const std::size_t lo = b * o.batch_size;
      const std::size_t hi = std::min(samples.size(), lo + o.batch_size);
      const std::size_t n = hi - lo;
      const double beta = loss::beta_schedule(step, lcfg);
      last_beta = beta;
      lr_scale = warmup_factor(step, warmup_steps);

      std::vector<SampleStep> out(n);
      parallel_for(n, cfg.threads, [&](std::size_t i) {
        const std::size_t idx = order[lo + i];
        const auto& s = samples[idx];
        try {
          ad::Graph graph;
          model::Bound bound(graph, params);
          std::optional<Tensor> noise;
          if (stochastic) {
            noise = stochastic::standard_normal(rng::Key(cfg.seed).derive({kTrainNoiseLabel, step, idx}),
                                                s.dag.leaves().size(), cfg.model.d_model);
          }
          auto fwd = model::forward_graph(bound, s.features, s.descriptors, s.dag, noise ? &*noise : nullptr);
          auto obj = loss::sample_objective(
              fwd.score, s.target, stochastic ? std::optional(fwd.gaussians.mu) : std::nullopt,
              stochastic ? std::optional(fwd.gaussians.logvar) : std::nullopt, fwd.attention, beta,
              use_aux ? lcfg.gamma : 0.0, lcfg, use_aux);
          out[i].total = obj.total.value().item();
          auto scaled = ad::scale(obj.total, 1.0 / static_cast<double>(n));
          out[i].grads = bound.gradients(graph.backward(scaled));
          out[i].objective = std::move(obj);
        } catch (const NumericalFault& e) {
          throw NumericalFault("epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ", sample '" +
                               s.sample.id() + "': " + e.what());
        }
      });

      // Fixed-order reduction keeps the update independent of the thread count.
      std::vector<Tensor> grads = std::move(out[0].grads);
      for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          auto dst = grads[p].data();
          const auto src = out[i].grads[p].data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      for (const auto& r : out) {
        sum_mse += r.objective.mse;
        const double kl = r.objective.kl.value_or(0.0);
        sum_kl += kl;
        sum_beta_kl += beta * kl;
        sum_sp += r.objective.sparsity;
        sum_rk += r.objective.ranking;
        sum_total += r.total;
      }
      try {
        optim::adamw_step(params.params.values(), grads, ck.optimizer, group_rates(params.params, o, lr_scale));
      } catch (const NumericalFault& e) {
        throw NumericalFault("epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                             ": optimizer: " + e.what());
      }
    }

    const double count = static_cast<double>(samples.size());
    EpochLog log;
    log.epoch = epoch;
    log.step = ck.optimizer.step;
    log.lr_scale = warmup_factor(ck.optimizer.step, warmup_steps);
    log.loss.mse = sum_mse / count;
    log.loss.sparsity = use_aux ? sum_sp / count : 0.0;
    log.loss.ranking = use_aux ? sum_rk / count : 0.0;
    log.loss.gamma_used = use_aux ? lcfg.gamma : 0.0;
    if (stochastic) {
      log.loss.kl = sum_kl / count;
      // KL-weighted mean beta, so that mse + beta_used * kl recomposes the
      // epoch total even though beta moves within the epoch.
      log.loss.beta_used = sum_kl > 0.0 ? sum_beta_kl / sum_kl : last_beta;
    }
    log.loss.total = sum_total / count;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.epoch = epoch + 1;
    if (options.write_files) {
      log_file << epoch_log_to_json(log) << '\n';
      log_file.flush();
      if (cfg.checkpoint_every != 0 && ck.epoch % cfg.checkpoint_every == 0) {
        save_checkpoint(cfg.out_dir / ("checkpoint_epoch" + std::to_string(ck.epoch) + ".rack"), ck);
      }
    }
    if (options.on_epoch) options.on_epoch(log);
    result.log.push_back(std::move(log));
  }
  if (options.write_files) save_checkpoint(cfg.out_dir / "checkpoint.rack", ck);
  return result;
}

rng::Key inference_key(std::uint64_t seed, const std::string& sample_id) {
  return rng::Key(seed).derive({kInferenceLabel, rng::hash_name(sample_id)});
}

Prediction predict(const Checkpoint& ckpt, const LoadedSample& s) {
  model::ForwardOptions opt;
  opt.mode = ckpt.config.mode;
  opt.n_samples = ckpt.config.n_inference_samples;
  opt.key = inference_key(ckpt.config.seed, s.sample.id());
  const auto out = model::forward(ckpt.params, s.features, s.descriptors, s.dag, opt);
  Prediction p;
  p.sample_id = s.sample.id();
  p.normalised = data::normalised_prediction(out.score, s.sample, ckpt.manifest, ckpt.rubric.difficulty_multiplier);
  p.denormalised = data::denormalise_label(p.normalised, ckpt.manifest.label_min, ckpt.manifest.label_max);
  p.uncertainty = out.uncertainty;
  p.centers = loss::attention_centers(out.attention);
  p.peaks = metrics::attention_peaks(out.attention.data(), out.attention.rows(), out.attention.cols());
  p.attention = out.attention;
  return p;
}

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<LoadedSample>& samples, std::size_t threads) {
  if (samples.empty()) throw ConfigError("evaluation split is empty");
  EvalResult res;
  res.records.resize(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto p = predict(ckpt, s);
    auto& r = res.records[i];
    r.sample_id = p.sample_id;
    r.predicted = p.normalised;
    r.truth = s.truth;
    r.uncertainty = p.uncertainty;
    r.peaks = p.peaks;
    r.intervals = s.sample.intervals;
    r.clips = s.sample.clips();
  });
  res.report = metrics::compute_report(res.records, 0.0, 1.0);
  return res;
}

EvalResult evaluate(const Checkpoint& ckpt, const std::string& split,
                    const std::optional<std::filesystem::path>& manifest_override) {
  const auto manifest = manifest_override.value_or(ckpt.config.manifest);
  const auto ds = load_dataset(manifest, ckpt.config.rubric_spec, ckpt.config.model, {split});
  if (!(ds.rubric == ckpt.rubric)) {
    throw ConfigError("rubric spec of " + manifest.string() + " does not match the checkpoint");
  }
  if (ds.manifest.seed != ckpt.manifest.seed || ds.manifest.label_min != ckpt.manifest.label_min ||
      ds.manifest.label_max != ckpt.manifest.label_max) {
    throw ConfigError("manifest " + manifest.string() + " describes a different dataset than the checkpoint");
  }
  return evaluate(ckpt, ds.split(split), ckpt.config.threads);
}

double export_calibration(const Checkpoint& ckpt, const std::vector<metrics::EvalRecord>& records,
                          const std::filesystem::path& out) {
  if (ckpt.config.mode != model::Mode::kStochastic) {
    throw ConfigError("calibration export needs a stochastic checkpoint; deterministic mode has no uncertainty");
  }
  metrics::CalibrationTable table;
  table.bins = metrics::calibration_bins(records);
  std::array<double, metrics::kCalibrationBins> mae{};
  for (std::size_t b = 0; b < mae.size(); ++b) mae[b] = table.bins[b].mae;
  table.kendall_tau = metrics::kendall_tau(mae);
  metrics::write_calibration_csv(out, table);
  return table.kendall_tau;
}

}  // namespace rica::engine

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rica/data.hpp"
#include "rica/losses.hpp"
#include "rica/metrics.hpp"
#include "rica/model.hpp"
#include "rica/optimizer.hpp"
#include "rica/rubric.hpp"

// Run configuration, checkpoints, and the train / evaluate / predict loops.
namespace rica::engine {

struct OptimizerConfig {
  // Per parameter group: video and step encoders, cross-attention, DAG head.
  double lr_encoder = 3e-4;
  double lr_attention = 3e-4;
  double lr_head = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_epochs = 5;
  std::size_t epochs = 200;
  std::size_t batch_size = 8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path rubric_spec;  // empty: the manifest's rubric
  std::filesystem::path out_dir = "run";
  model::ModelConfig model;
  loss::LossConfig loss;  // total_steps is derived from the schedule
  OptimizerConfig optimizer;
  model::Mode mode = model::Mode::kStochastic;
  std::size_t n_inference_samples = model::kDefaultInferenceSamples;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  void check() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Relative paths are resolved against `base_dir`. Unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

std::string mode_name(model::Mode mode);

struct LoadedSample {
  data::SyntheticSample sample;
  Tensor features;
  Tensor descriptors;
  rubric::RubricDag dag;
  double target = 0.0;  // what the network regresses
  double truth = 0.0;   // normalised label
};

struct Dataset {
  data::Manifest manifest;
  rubric::RubricSpec rubric;
  std::vector<LoadedSample> train;
  std::vector<LoadedSample> test;

  const std::vector<LoadedSample>& split(const std::string& name) const;
};

// Loads and validates every sample against the rubric and model dims.
Dataset load_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& rubric_override,
                     const model::ModelConfig& model, const std::vector<std::string>& splits = {"train", "test"});
LoadedSample prepare_sample(data::SyntheticSample sample, const Dataset& ds, const model::ModelConfig& model);

struct Checkpoint {
  RunConfig config;
  model::ModelParams params;
  optim::OptimizerState optimizer;
  std::size_t epoch = 0;  // completed epochs
  rubric::RubricSpec rubric;
  data::Manifest manifest;  // label range and descriptor seed; paths are not stored
};

inline constexpr char kCheckpointMagic[4] = {'R', 'A', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;
  std::uint64_t step = 0;  // optimizer steps completed
  double lr_scale = 0.0;   // warmup factor reached once the epoch is done
  loss::LossBreakdown loss;  // per-sample means over the epoch
  double seconds = 0.0;
};

std::string epoch_log_to_json(const EpochLog& log);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::optional<std::size_t> stop_after;        // stop after this many completed epochs
  bool write_files = true;                      // checkpoints and log under out_dir
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

// Warmup factor: 0 at step 0, reaching 1 at the end of the warmup epochs.
double warmup_factor(std::uint64_t step, std::uint64_t warmup_steps);

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size);

TrainResult train(const RunConfig& cfg, const TrainOptions& options = {});
// Same loop over an already loaded dataset (used by tests and the harness).
TrainResult train(const RunConfig& cfg, const Dataset& ds, const TrainOptions& options = {});

// Inference key for a sample; the same sample and seed always use the same noise.
rng::Key inference_key(std::uint64_t seed, const std::string& sample_id);

struct Prediction {
  std::string sample_id;
  double normalised = 0.0;
  double denormalised = 0.0;
  std::optional<double> uncertainty;
  std::vector<double> centers;
  std::vector<std::size_t> peaks;
  Tensor attention;
};

Prediction predict(const Checkpoint& ckpt, const LoadedSample& sample);

struct EvalResult {
  std::vector<metrics::EvalRecord> records;
  metrics::MetricsReport report;
};

EvalResult evaluate(const Checkpoint& ckpt, const std::vector<LoadedSample>& samples, std::size_t threads = 1);
// Loads the manifest (from the checkpoint's config unless overridden), checks
// the rubric matches the checkpoint, and evaluates one split.
EvalResult evaluate(const Checkpoint& ckpt, const std::string& split,
                    const std::optional<std::filesystem::path>& manifest_override = std::nullopt);

// Throws ConfigError for deterministic checkpoints. Returns tau.
double export_calibration(const Checkpoint& ckpt, const std::vector<metrics::EvalRecord>& records,
                          const std::filesystem::path& out);

}  // namespace rica::engine

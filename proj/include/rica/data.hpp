#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rica/features.hpp"
#include "rica/metrics.hpp"
#include "rica/rubric.hpp"
#include "rica/tensor.hpp"

// Synthetic action-quality data: a known rubric-driven scoring process with
// planted step timing, plus the binary sample format and the JSON manifest.
namespace rica::data {

struct GeneratorConfig {
  std::size_t n_train = 500;
  std::size_t n_test = 150;
  std::size_t clips = 24;  // T
  std::size_t d_feat = 32;
  std::size_t d_text = 32;
  std::size_t step_types = 8;
  std::size_t k_min = 2;
  std::size_t k_max = 5;
  double eta_min = 0.05;
  double eta_max = 0.5;
  double difficulty_min = 1.0;
  double difficulty_max = 1.0;
  std::uint64_t seed = 7;
  std::string out_dir = "data";  // relative paths resolve against the config file

  void check() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

GeneratorConfig generator_config_from_json(const std::string& text);
std::string generator_config_to_json(const GeneratorConfig& cfg);

struct SyntheticSample {
  FeatureSequence features;  // features.id is the sample id
  std::vector<std::uint32_t> steps;
  std::vector<metrics::Interval> intervals;  // 1-indexed, inclusive
  std::vector<double> qualities;             // q_s in [0, 1]
  double difficulty = 1.0;
  double label = 0.0;  // raw, before dataset normalisation
  double eta = 0.0;

  const std::string& id() const { return features.id; }
  std::size_t clips() const { return features.clips; }
  void check() const;
  friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

// Per-step sub-score on the 0-10 judging scale.
double subscore(double quality);
// difficulty * sum_s subscore(q_s).
double raw_label(const std::vector<double>& qualities, double difficulty);

// Default rubric for `n` step types: types split into three stages of
// consecutive ids ("approach", "execution", "finish").
rubric::RubricSpec default_rubric(std::size_t step_types, bool difficulty_multiplier = false);

// Unit-norm pseudo-random descriptor, deterministic in (id, d_text, seed). A
// candidate is rejected while |cos| >= 0.9 against any smaller id.
std::vector<double> step_descriptor(std::uint32_t step_type, std::size_t d_text, std::uint64_t seed);
Tensor step_descriptors(const std::vector<std::uint32_t>& steps, std::size_t d_text, std::uint64_t seed);

inline constexpr double kMaxDescriptorCosine = 0.9;

// Unit direction along which clip features encode quality.
std::vector<double> quality_direction(std::size_t d_feat, std::uint64_t seed);
// Unit signature of a step type, orthogonal to the quality direction.
std::vector<double> step_signature(std::uint32_t step_type, std::size_t d_feat, std::uint64_t seed);

// One sample, deterministic in (cfg, index). `index` numbers train samples
// first, then test samples.
SyntheticSample generate_sample(const GeneratorConfig& cfg, std::size_t index, const std::string& id);

struct Manifest {
  std::filesystem::path base_dir;  // paths below are relative to this
  std::filesystem::path rubric_spec;
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> test;
  std::uint64_t seed = 0;
  double label_min = 0.0;
  double label_max = 1.0;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  const std::vector<std::filesystem::path>& split(const std::string& name) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Writes <out_dir>/manifest.json, <out_dir>/rubric.json and one file per
// sample under <out_dir>/samples/. Returns the manifest.
Manifest generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir,
                          std::size_t threads = 1);

inline constexpr char kSampleMagic[4] = {'R', 'A', 'Q', 'A'};
inline constexpr std::uint32_t kSampleVersion = 1;

std::vector<std::uint8_t> encode_sample(const SyntheticSample& sample);
// `id` becomes the sample id; the file format does not carry one.
SyntheticSample decode_sample(const std::vector<std::uint8_t>& bytes, const std::string& id);
void store_sample(const std::filesystem::path& path, const SyntheticSample& sample);
// The sample id is the file stem.
SyntheticSample load_sample(const std::filesystem::path& path);

// Label-side transforms. The network regresses `training_target`; its output
// maps back to a normalised score through `normalised_prediction`. With the
// difficulty multiplier on, the network sees labels divided by difficulty.
double normalise_label(double raw, double label_min, double label_max);
double denormalise_label(double normalised, double label_min, double label_max);
double training_target(const SyntheticSample& s, const Manifest& m, bool difficulty_multiplier);
double normalised_prediction(double network_output, const SyntheticSample& s, const Manifest& m,
                             bool difficulty_multiplier);

// Peak per step from noiseless features: the clip with the largest projection
// onto the step's signature. Used to show the planted intervals are recoverable.
std::vector<std::size_t> oracle_peaks(const SyntheticSample& s, std::uint64_t seed);

}  // namespace rica::data

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rica/autodiff.hpp"
#include "rica/features.hpp"
#include "rica/rng.hpp"
#include "rica/rubric.hpp"
#include "rica/stochastic.hpp"

// Embedding function f (video self-attention, step MLP, cross-attention,
// Gaussian heads) and scoring function h (propagation over the rubric DAG and
// score decoding).
namespace rica::model {

enum class Aggregation : std::uint8_t { kMean, kSum };
enum class QuerySource : std::uint8_t { kStates, kStatesPlusSteps, kSteps };

struct ModelConfig {
  std::size_t d_feat = 32;
  std::size_t d_text = 32;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 2;
  std::size_t encoder_blocks = 1;
  std::size_t cross_blocks = 2;
  // What the cross blocks attend with: the running step states, states plus
  // the encoded descriptors, or the descriptors alone in every block.
  QuerySource query_source = QuerySource::kSteps;
  // Length of the learned position table; videos may not be longer.
  std::size_t max_clips = 24;
  bool position_encoding = true;
  std::size_t aggregator_hidden = 64;
  // 0 makes the score decoder a single linear layer.
  std::size_t decoder_hidden = 64;
  Aggregation aggregation = Aggregation::kSum;
  double logvar_bias_init = 0.0;

  void check() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameter groups get separate learning rates.
enum class ParamGroup : std::uint8_t { kEncoder, kAttention, kHead };

std::string group_name(ParamGroup g);

class ParameterSet {
 public:
  std::size_t add(std::string name, ParamGroup group, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  ParamGroup group(std::size_t i) const { return groups_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::optional<std::size_t> find(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<ParamGroup> groups_;
  std::vector<Tensor> values_;
};

// Indices into a ParameterSet.
struct Linear {
  std::size_t weight = 0;  // [in, out]
  std::size_t bias = 0;    // [1, out]
};

struct Norm {
  std::size_t gain = 0;
  std::size_t bias = 0;
};

struct Attention {
  Linear query, key, value, out;
};

struct FeedForward {
  Linear up, down;
};

struct SelfAttentionBlock {
  Norm norm_attn;
  Attention attn;
  Norm norm_ffn;
  FeedForward ffn;
};

struct CrossAttentionBlock {
  Norm norm_query;
  Norm norm_tokens;
  Attention attn;
  Norm norm_ffn;
  FeedForward ffn;
};

struct Mlp {
  Linear first;
  std::optional<Linear> second;  // absent for a single linear layer
};

struct ModelParams {
  ModelConfig config;
  ParameterSet params;

  Linear video_in;
  std::optional<std::size_t> position;  // [max_clips, d_model]
  std::vector<SelfAttentionBlock> encoder;
  Mlp step_mlp;
  std::vector<CrossAttentionBlock> cross;
  Norm cross_out;
  Linear mu_head;
  Linear logvar_head;
  Mlp aggregate_intermediate;  // G for intermediate nodes
  Mlp aggregate_root;          // G for the root
  Mlp decoder;                 // score decoder
};

// Glorot-uniform weights, zero biases, unit norm gains, small random position
// table; deterministic in (config, seed).
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Parameters bound into one Graph. Each parameter becomes a leaf the first time
// it is used.
class Bound {
 public:
  Bound(ad::Graph& graph, const ModelParams& params);

  ad::Var operator()(std::size_t index);
  ad::Graph& graph() { return graph_; }
  const ModelParams& model() const { return params_; }

  // Gradient per parameter in ParameterSet order; zeros for unused ones.
  std::vector<Tensor> gradients(const ad::Gradients& grads) const;

 private:
  ad::Graph& graph_;
  const ModelParams& params_;
  std::vector<std::optional<ad::Var>> vars_;
};

ad::Var apply(Bound& b, const Linear& layer, ad::Var x);
ad::Var apply(Bound& b, const Norm& layer, ad::Var x);
ad::Var apply(Bound& b, const Mlp& mlp, ad::Var x);

struct AttentionOutput {
  ad::Var out;
  ad::Var map;  // head-averaged, rows sum to 1
};

AttentionOutput multi_head_attention(Bound& b, const Attention& attn, ad::Var queries,
                                     ad::Var tokens, std::size_t heads);

// [T, d_feat] features -> [T, d_model] tokens.
ad::Var encode_video(Bound& b, const Tensor& features);
// [K, d_text] descriptors -> [K, d_model] queries, row-wise.
ad::Var encode_steps(Bound& b, const Tensor& descriptors);

struct CrossAttendOutput {
  ad::Var states;     // [K, d_model]
  ad::Var attention;  // [K, T] from the last block
};
CrossAttendOutput cross_attend(Bound& b, ad::Var queries, ad::Var tokens);

struct GaussianHeads {
  ad::Var mu;      // [K, d_model]
  ad::Var logvar;  // clamped
  ad::Var sigma;
};
GaussianHeads predict_gaussians(Bound& b, ad::Var states);

// Per-node aggregation G applied to the pooled predecessor embedding.
using NodeFunction = std::function<ad::Var(rubric::NodeKind, ad::Var)>;

// Pools predecessors (mean or sum, in ascending id order) and applies `g`, in
// topological order. Row k of `leaf_samples` is leaf k. Returns the [1, D] root
// embedding.
ad::Var propagate_scores(const rubric::RubricDag& dag, ad::Var leaf_samples,
                         const NodeFunction& g, Aggregation aggregation = Aggregation::kMean);
ad::Var propagate_scores(Bound& b, const rubric::RubricDag& dag, ad::Var leaf_samples);

// [1, D] -> [1, 1].
ad::Var decode_score(Bound& b, ad::Var root);

enum class Mode : std::uint8_t { kStochastic, kDeterministic };

inline constexpr std::size_t kDefaultInferenceSamples = 20;

struct ForwardOptions {
  Mode mode = Mode::kStochastic;
  std::size_t n_samples = kDefaultInferenceSamples;
  rng::Key key;
};

struct ScorePrediction {
  double score = 0.0;
  std::optional<double> uncertainty;  // stochastic mode only
  Tensor attention;                   // [K, T]
  std::vector<stochastic::GaussianEmbedding> per_step;
};

// Graph outputs of one training pass. `noise` (same shape as mu) selects the
// reparameterised sample; nullptr uses mu directly.
struct GraphOutputs {
  ad::Var score;
  GaussianHeads gaussians;
  ad::Var attention;
};
GraphOutputs forward_graph(Bound& b, const Tensor& features, const Tensor& descriptors,
                           const rubric::RubricDag& dag, const Tensor* noise);

// Inference: stochastic mode averages `n_samples` decoded scores and attaches
// the harmonic-mean uncertainty; deterministic mode decodes from the means.
ScorePrediction forward(const ModelParams& params, const Tensor& features,
                        const Tensor& descriptors, const rubric::RubricDag& dag,
                        const ForwardOptions& options);

}  // namespace rica::model

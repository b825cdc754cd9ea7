#include "rica/model.hpp"

#include <cmath>
#include <string>

#include "rica/error.hpp"
#include "rica/optimizer.hpp"

namespace rica::model {
namespace {

using ad::Var;

class Initializer {
 public:
  Initializer(ParameterSet& set, std::uint64_t seed) : set_(set), key_(seed) {}

  Linear linear(const std::string& name, ParamGroup group, std::size_t in, std::size_t out,
                double bias = 0.0) {
    Linear l;
    l.weight = set_.add(name + ".weight", group, glorot(name + ".weight", in, out));
    Tensor b({1, out}, bias);
    optim::round_to_float(b);
    l.bias = set_.add(name + ".bias", group, std::move(b));
    return l;
  }

  Norm norm(const std::string& name, ParamGroup group, std::size_t dim) {
    Norm n;
    n.gain = set_.add(name + ".gain", group, Tensor({1, dim}, 1.0));
    n.bias = set_.add(name + ".bias", group, Tensor({1, dim}, 0.0));
    return n;
  }

  Attention attention(const std::string& name, ParamGroup group, std::size_t dim) {
    return {linear(name + ".query", group, dim, dim), linear(name + ".key", group, dim, dim),
            linear(name + ".value", group, dim, dim), linear(name + ".out", group, dim, dim)};
  }

  FeedForward ffn(const std::string& name, ParamGroup group, std::size_t dim, std::size_t hidden) {
    return {linear(name + ".up", group, dim, hidden), linear(name + ".down", group, hidden, dim)};
  }

  Mlp mlp(const std::string& name, ParamGroup group, std::size_t in, std::size_t hidden,
          std::size_t out) {
    Mlp m;
    if (hidden == 0) {
      m.first = linear(name + ".0", group, in, out);
    } else {
      m.first = linear(name + ".0", group, in, hidden);
      m.second = linear(name + ".1", group, hidden, out);
    }
    return m;
  }

  std::size_t normal(const std::string& name, ParamGroup group, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    const auto k = key_.derive(rng::hash_name(name));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * k.normal(i);
    optim::round_to_float(t);
    return set_.add(name, group, std::move(t));
  }

 private:
  Tensor glorot(const std::string& name, std::size_t in, std::size_t out) {
    Tensor t({in, out});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    const auto k = key_.derive(rng::hash_name(name));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = limit * (2.0 * k.uniform(i) - 1.0);
    optim::round_to_float(t);
    return t;
  }

  ParameterSet& set_;
  rng::Key key_;
};

}  // namespace

void ModelConfig::check() const {
  if (d_feat == 0 || d_text == 0 || d_model == 0) throw ConfigError("model dims must be positive");
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (cross_blocks == 0) throw ConfigError("at least one cross-attention block is required");
  if (max_clips == 0) throw ConfigError("max_clips must be positive");
  if (aggregator_hidden == 0) throw ConfigError("aggregator_hidden must be positive");
}

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kAttention: return "attention";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

std::size_t ParameterSet::add(std::string name, ParamGroup group, Tensor value) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  groups_.push_back(group);
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.check();
  ModelParams m;
  m.config = config;
  Initializer init(m.params, seed);
  const auto d = config.d_model;
  const auto hidden = config.ffn_mult * d;

  m.video_in = init.linear("video.in", ParamGroup::kEncoder, config.d_feat, d);
  if (config.position_encoding) {
    m.position = init.normal("video.position", ParamGroup::kEncoder, {config.max_clips, d}, 0.02);
  }
  for (std::size_t i = 0; i < config.encoder_blocks; ++i) {
    const auto p = "video.block" + std::to_string(i);
    m.encoder.push_back({init.norm(p + ".norm_attn", ParamGroup::kEncoder, d),
                         init.attention(p + ".attn", ParamGroup::kEncoder, d),
                         init.norm(p + ".norm_ffn", ParamGroup::kEncoder, d),
                         init.ffn(p + ".ffn", ParamGroup::kEncoder, d, hidden)});
  }
  m.step_mlp = init.mlp("steps.mlp", ParamGroup::kEncoder, config.d_text, d, d);
  for (std::size_t i = 0; i < config.cross_blocks; ++i) {
    const auto p = "cross.block" + std::to_string(i);
    m.cross.push_back({init.norm(p + ".norm_query", ParamGroup::kAttention, d),
                       init.norm(p + ".norm_tokens", ParamGroup::kAttention, d),
                       init.attention(p + ".attn", ParamGroup::kAttention, d),
                       init.norm(p + ".norm_ffn", ParamGroup::kAttention, d),
                       init.ffn(p + ".ffn", ParamGroup::kAttention, d, hidden)});
  }
  m.cross_out = init.norm("cross.norm_out", ParamGroup::kAttention, d);
  m.mu_head = init.linear("head.mu", ParamGroup::kHead, d, d);
  m.logvar_head = init.linear("head.logvar", ParamGroup::kHead, d, d, config.logvar_bias_init);
  m.aggregate_intermediate =
      init.mlp("dag.intermediate", ParamGroup::kHead, d, config.aggregator_hidden, d);
  m.aggregate_root = init.mlp("dag.root", ParamGroup::kHead, d, config.aggregator_hidden, d);
  m.decoder = init.mlp("dag.decoder", ParamGroup::kHead, d, config.decoder_hidden, 1);
  return m;
}

Bound::Bound(ad::Graph& graph, const ModelParams& params)
    : graph_(graph), params_(params), vars_(params.params.size()) {}

Var Bound::operator()(std::size_t index) {
  auto& slot = vars_.at(index);
  if (!slot) slot = graph_.parameter(params_.params.value(index));
  return *slot;
}

std::vector<Tensor> Bound::gradients(const ad::Gradients& grads) const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i] && grads.has(*vars_[i])) out.push_back(grads[*vars_[i]]);
    else out.emplace_back(params_.params.value(i).shape());
  }
  return out;
}

Var apply(Bound& b, const Linear& layer, Var x) {
  return ad::add(ad::matmul(x, b(layer.weight)), b(layer.bias));
}

Var apply(Bound& b, const Norm& layer, Var x) {
  return ad::add(ad::mul(ad::layer_norm_rows(x), b(layer.gain)), b(layer.bias));
}

Var apply(Bound& b, const Mlp& mlp, Var x) {
  auto h = apply(b, mlp.first, x);
  if (!mlp.second) return h;
  return apply(b, *mlp.second, ad::gelu(h));
}

namespace {

Var feed_forward(Bound& b, const FeedForward& ffn, Var x) {
  return apply(b, ffn.down, ad::gelu(apply(b, ffn.up, x)));
}

}  // namespace

AttentionOutput multi_head_attention(Bound& b, const Attention& attn, Var queries, Var tokens,
                                     std::size_t heads) {
  const auto d = queries.shape()[1];
  if (tokens.shape()[1] != d) throw DimensionError("attention: query and token widths differ");
  const auto dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto q = apply(b, attn.query, queries);
  auto k = apply(b, attn.key, tokens);
  auto v = apply(b, attn.value, tokens);
  std::vector<Var> outs;
  std::optional<Var> map_sum;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = ad::slice(q, 1, h * dh, dh);
    auto kh = ad::slice(k, 1, h * dh, dh);
    auto vh = ad::slice(v, 1, h * dh, dh);
    auto weights = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    outs.push_back(ad::matmul(weights, vh));
    map_sum = map_sum ? ad::add(*map_sum, weights) : weights;
  }
  auto merged = heads == 1 ? outs.front() : ad::concat(outs, 1);
  return {apply(b, attn.out, merged), ad::scale(*map_sum, 1.0 / static_cast<double>(heads))};
}

Var encode_video(Bound& b, const Tensor& features) {
  const auto& m = b.model();
  const auto& cfg = m.config;
  if (features.rank() != 2 || features.cols() != cfg.d_feat) {
    throw DimensionError("video features " + shape_string(features.shape()) +
                         " do not match d_feat " + std::to_string(cfg.d_feat));
  }
  const auto clips = features.rows();
  auto x = apply(b, m.video_in, b.graph().constant(features));
  if (m.position) {
    if (clips > cfg.max_clips) {
      throw DimensionError("video has " + std::to_string(clips) + " clips, position table holds " +
                           std::to_string(cfg.max_clips));
    }
    x = ad::add(x, ad::slice(b(*m.position), 0, 0, clips));
  }
  for (const auto& block : m.encoder) {
    auto h = apply(b, block.norm_attn, x);
    x = ad::add(x, multi_head_attention(b, block.attn, h, h, cfg.heads).out);
    x = ad::add(x, feed_forward(b, block.ffn, apply(b, block.norm_ffn, x)));
  }
  return x;
}

Var encode_steps(Bound& b, const Tensor& descriptors) {
  const auto& m = b.model();
  if (descriptors.rank() != 2 || descriptors.cols() != m.config.d_text) {
    throw DimensionError("step descriptors " + shape_string(descriptors.shape()) +
                         " do not match d_text " + std::to_string(m.config.d_text));
  }
  return apply(b, m.step_mlp, b.graph().constant(descriptors));
}

CrossAttendOutput cross_attend(Bound& b, Var queries, Var tokens) {
  const auto& m = b.model();
  Var q = queries;
  Var last_map;
  for (const auto& block : m.cross) {
    // Querying with the step embedding keeps later blocks' maps step-specific;
    // the states still accumulate through the residual path.
    Var query_in;
    switch (m.config.query_source) {
      case QuerySource::kStates: query_in = apply(b, block.norm_query, q); break;
      case QuerySource::kStatesPlusSteps:
        query_in = ad::add(apply(b, block.norm_query, q), apply(b, block.norm_query, queries));
        break;
      case QuerySource::kSteps: query_in = apply(b, block.norm_query, queries); break;
    }
    auto att = multi_head_attention(b, block.attn, query_in, apply(b, block.norm_tokens, tokens),
                                    m.config.heads);
    q = ad::add(q, att.out);
    q = ad::add(q, feed_forward(b, block.ffn, apply(b, block.norm_ffn, q)));
    last_map = att.map;
  }
  return {apply(b, m.cross_out, q), last_map};
}

GaussianHeads predict_gaussians(Bound& b, Var states) {
  const auto& m = b.model();
  auto mu = apply(b, m.mu_head, states);
  auto logvar = stochastic::clamp_logvar(apply(b, m.logvar_head, states));
  return {mu, logvar, ad::exp(ad::scale(logvar, 0.5))};
}

Var propagate_scores(const rubric::RubricDag& dag, Var leaf_samples, const NodeFunction& g,
                     Aggregation aggregation) {
  const auto& leaves = dag.leaves();
  if (leaf_samples.shape().size() != 2 || leaf_samples.shape()[0] != leaves.size()) {
    throw DimensionError("propagate_scores: " + std::to_string(leaves.size()) +
                         " leaves but samples of shape " + shape_string(leaf_samples.shape()));
  }
  const auto& order = dag.topo_order();
  if (order.size() != dag.nodes().size()) throw ContractError("propagate_scores: DAG has a cycle");
  const auto root = dag.root();
  if (!root) throw ContractError("propagate_scores: DAG needs exactly one root");

  std::vector<std::optional<Var>> embedding(dag.nodes().size());
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    embedding[leaves[k]] = leaves.size() == 1 ? leaf_samples : ad::slice(leaf_samples, 0, k, 1);
  }
  for (auto id : order) {
    const auto& node = dag.nodes()[id];
    if (node.kind == rubric::NodeKind::kLeaf) continue;
    const auto& preds = dag.predecessors(id);
    if (preds.empty()) throw ContractError("non-leaf node without predecessors");
    std::vector<Var> inputs;
    for (auto p : preds) inputs.push_back(*embedding[p]);
    Var pooled = inputs.size() == 1 ? inputs.front() : ad::concat(inputs, 0);
    if (inputs.size() > 1) {
      pooled = aggregation == Aggregation::kMean ? ad::mean_rows(pooled) : ad::sum_rows(pooled);
    }
    embedding[id] = g(node.kind, pooled);
  }
  return *embedding[*root];
}

Var propagate_scores(Bound& b, const rubric::RubricDag& dag, Var leaf_samples) {
  const auto& m = b.model();
  return propagate_scores(
      dag, leaf_samples,
      [&](rubric::NodeKind kind, Var x) {
        return apply(b, kind == rubric::NodeKind::kRoot ? m.aggregate_root : m.aggregate_intermediate,
                     x);
      },
      m.config.aggregation);
}

Var decode_score(Bound& b, Var root) { return apply(b, b.model().decoder, root); }

GraphOutputs forward_graph(Bound& b, const Tensor& features, const Tensor& descriptors,
                           const rubric::RubricDag& dag, const Tensor* noise) {
  if (descriptors.rows() != dag.leaves().size()) {
    throw DimensionError("forward: " + std::to_string(descriptors.rows()) + " steps but " +
                         std::to_string(dag.leaves().size()) + " DAG leaves");
  }
  auto tokens = encode_video(b, features);
  auto queries = encode_steps(b, descriptors);
  auto fused = cross_attend(b, queries, tokens);
  auto gauss = predict_gaussians(b, fused.states);
  Var leaves = noise ? stochastic::sample_reparameterized(gauss.mu, gauss.sigma, *noise) : gauss.mu;
  auto root = propagate_scores(b, dag, leaves);
  return {decode_score(b, root), gauss, fused.attention};
}

ScorePrediction forward(const ModelParams& params, const Tensor& features,
                        const Tensor& descriptors, const rubric::RubricDag& dag,
                        const ForwardOptions& options) {
  if (options.mode == Mode::kStochastic && options.n_samples == 0) {
    throw ContractError("stochastic forward needs at least one sample");
  }
  ad::Graph graph;
  Bound b(graph, params);
  if (descriptors.rows() != dag.leaves().size()) {
    throw DimensionError("forward: " + std::to_string(descriptors.rows()) + " steps but " +
                         std::to_string(dag.leaves().size()) + " DAG leaves");
  }
  auto tokens = encode_video(b, features);
  auto fused = cross_attend(b, encode_steps(b, descriptors), tokens);
  auto gauss = predict_gaussians(b, fused.states);

  ScorePrediction pred;
  pred.attention = fused.attention.value();
  const Tensor mu = gauss.mu.value();
  const Tensor sigma = gauss.sigma.value();
  std::vector<std::vector<double>> sigmas;
  for (std::size_t k = 0; k < mu.rows(); ++k) {
    pred.per_step.push_back({mu.row(k), sigma.row(k)});
    sigmas.push_back(sigma.row(k));
  }

  if (options.mode == Mode::kDeterministic) {
    pred.score = decode_score(b, propagate_scores(b, dag, gauss.mu)).value().item();
    return pred;
  }
  double total = 0.0;
  for (std::size_t n = 0; n < options.n_samples; ++n) {
    const auto noise = stochastic::standard_normal(options.key.derive(n), mu.rows(), mu.cols());
    auto leaves = stochastic::sample_reparameterized(gauss.mu, gauss.sigma, noise);
    total += decode_score(b, propagate_scores(b, dag, leaves)).value().item();
  }
  pred.score = total / static_cast<double>(options.n_samples);
  pred.uncertainty = stochastic::uncertainty(sigmas);
  return pred;
}

}  // namespace rica::model

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "rica/engine.hpp"
#include "rica/error.hpp"

namespace rica::engine {
namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads one JSON object, rejecting keys that are not read.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.emplace_back(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string where = ctx_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + " must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
    } else {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
    }
    out = v.get<T>();
  }

  const json* child(const char* key) {
    known_.emplace_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
        throw ConfigError(ctx_ + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string ctx_;
  std::vector<std::string> known_;
};

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : (base / path).lexically_normal();
}

std::string aggregation_name(model::Aggregation a) {
  return a == model::Aggregation::kMean ? "mean" : "sum";
}

constexpr const char* kQuerySourceNames[] = {"states", "states+steps", "steps"};

std::string query_source_name(model::QuerySource q) { return kQuerySourceNames[static_cast<int>(q)]; }

}  // namespace

std::string mode_name(model::Mode mode) {
  return mode == model::Mode::kStochastic ? "stochastic" : "deterministic";
}

void RunConfig::check() const {
  if (manifest.empty()) throw ConfigError("run config needs a manifest path");
  model.check();
  loss.check();
  const auto& o = optimizer;
  if (o.lr_encoder < 0.0 || o.lr_attention < 0.0 || o.lr_head < 0.0) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (o.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw ConfigError("eps must be positive");
  if (o.epochs == 0) throw ConfigError("epochs must be positive");
  if (o.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (mode == model::Mode::kStochastic && n_inference_samples == 0) {
    throw ConfigError("n_inference_samples must be positive in stochastic mode");
  }
  if (threads == 0) throw ConfigError("threads must be positive");
}

RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader top(j, "config");
  std::string manifest;
  std::string rubric_spec;
  std::string out_dir = c.out_dir.string();
  top.get("manifest", manifest);
  top.get("rubric_spec", rubric_spec);
  top.get("out_dir", out_dir);
  c.manifest = resolve(manifest, base_dir);
  c.rubric_spec = resolve(rubric_spec, base_dir);
  c.out_dir = resolve(out_dir, base_dir);

  if (const auto* m = top.child("model")) {
    ObjectReader r(*m, "config.model");
    auto& mc = c.model;
    r.get("d_feat", mc.d_feat);
    r.get("d_text", mc.d_text);
    r.get("d_model", mc.d_model);
    r.get("heads", mc.heads);
    r.get("ffn_mult", mc.ffn_mult);
    r.get("encoder_blocks", mc.encoder_blocks);
    r.get("cross_blocks", mc.cross_blocks);
    r.get("max_clips", mc.max_clips);
    r.get("position_encoding", mc.position_encoding);
    r.get("aggregator_hidden", mc.aggregator_hidden);
    r.get("decoder_hidden", mc.decoder_hidden);
    r.get("logvar_bias_init", mc.logvar_bias_init);
    std::string agg = aggregation_name(mc.aggregation);
    r.get("aggregation", agg);
    if (agg == "mean") {
      mc.aggregation = model::Aggregation::kMean;
    } else if (agg == "sum") {
      mc.aggregation = model::Aggregation::kSum;
    } else {
      throw ConfigError("config.model.aggregation must be \"mean\" or \"sum\"");
    }
    std::string qs = query_source_name(mc.query_source);
    r.get("query_source", qs);
    const auto* qit = std::find(std::begin(kQuerySourceNames), std::end(kQuerySourceNames), qs);
    if (qit == std::end(kQuerySourceNames)) {
      throw ConfigError("config.model.query_source must be \"states\", \"states+steps\" or \"steps\"");
    }
    mc.query_source = static_cast<model::QuerySource>(qit - std::begin(kQuerySourceNames));
    r.finish();
  }
  if (const auto* l = top.child("loss")) {
    ObjectReader r(*l, "config.loss");
    r.get("beta_start", c.loss.beta_start);
    r.get("beta_max", c.loss.beta_max);
    r.get("gamma", c.loss.gamma);
    r.get("margin", c.loss.margin);
    r.get("output_sigma", c.loss.output_sigma);
    r.finish();
  }
  if (const auto* o = top.child("optimizer")) {
    ObjectReader r(*o, "config.optimizer");
    auto& oc = c.optimizer;
    r.get("lr_encoder", oc.lr_encoder);
    r.get("lr_attention", oc.lr_attention);
    r.get("lr_head", oc.lr_head);
    r.get("weight_decay", oc.weight_decay);
    r.get("beta1", oc.beta1);
    r.get("beta2", oc.beta2);
    r.get("eps", oc.eps);
    r.get("warmup_epochs", oc.warmup_epochs);
    r.get("epochs", oc.epochs);
    r.get("batch_size", oc.batch_size);
    r.finish();
  }
  std::string mode = mode_name(c.mode);
  top.get("mode", mode);
  if (mode == "stochastic") {
    c.mode = model::Mode::kStochastic;
  } else if (mode == "deterministic") {
    c.mode = model::Mode::kDeterministic;
  } else {
    throw ConfigError("config.mode must be \"stochastic\" or \"deterministic\"");
  }
  top.get("n_inference_samples", c.n_inference_samples);
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.get("checkpoint_every", c.checkpoint_every);
  top.finish();
  c.check();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str(), path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
  ojson j;
  j["manifest"] = c.manifest.generic_string();
  j["rubric_spec"] = c.rubric_spec.generic_string();
  j["out_dir"] = c.out_dir.generic_string();
  const auto& m = c.model;
  j["model"] = {{"d_feat", m.d_feat},
                {"d_text", m.d_text},
                {"d_model", m.d_model},
                {"heads", m.heads},
                {"ffn_mult", m.ffn_mult},
                {"encoder_blocks", m.encoder_blocks},
                {"cross_blocks", m.cross_blocks},
                {"query_source", query_source_name(m.query_source)},
                {"max_clips", m.max_clips},
                {"position_encoding", m.position_encoding},
                {"aggregator_hidden", m.aggregator_hidden},
                {"decoder_hidden", m.decoder_hidden},
                {"aggregation", aggregation_name(m.aggregation)},
                {"logvar_bias_init", m.logvar_bias_init}};
  j["loss"] = {{"beta_start", c.loss.beta_start},
               {"beta_max", c.loss.beta_max},
               {"gamma", c.loss.gamma},
               {"margin", c.loss.margin},
               {"output_sigma", c.loss.output_sigma}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"lr_encoder", o.lr_encoder},
                    {"lr_attention", o.lr_attention},
                    {"lr_head", o.lr_head},
                    {"weight_decay", o.weight_decay},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"eps", o.eps},
                    {"warmup_epochs", o.warmup_epochs},
                    {"epochs", o.epochs},
                    {"batch_size", o.batch_size}};
  j["mode"] = mode_name(c.mode);
  j["n_inference_samples"] = c.n_inference_samples;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["checkpoint_every"] = c.checkpoint_every;
  return j.dump(2);
}

}  // namespace rica::engine

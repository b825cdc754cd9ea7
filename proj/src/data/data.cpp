#include "rica/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "rica/error.hpp"
#include "rica/rng.hpp"

namespace rica::data {
namespace {

using nlohmann::json;

constexpr std::uint64_t kDescriptorLabel = rng::hash_name("descriptor");
constexpr std::uint64_t kSignatureLabel = rng::hash_name("signature");
constexpr std::uint64_t kQualityLabel = rng::hash_name("quality-direction");
constexpr std::uint64_t kSampleLabel = rng::hash_name("sample");
constexpr std::uint64_t kNoiseLabel = rng::hash_name("noise");

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalise(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
}

std::vector<double> gaussian_vector(rng::Key key, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = key.normal(i);
  return v;
}

template <typename T>
T read_field(const json& j, const char* key, const T& fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

// Little-endian byte writer/reader for the sample format.
class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(b >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    u32(b);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " more of " + std::to_string(bytes_.size()) + ")");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t b = 0;
    for (int i = 0; i < 8; ++i) b |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    double v;
    std::memcpy(&v, &b, 8);
    return v;
  }
  float f32() {
    const std::uint32_t b = u32();
    float v;
    std::memcpy(&v, &b, 4);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace

void GeneratorConfig::check() const {
  if (n_train == 0) throw ConfigError("n_train must be positive");
  if (clips == 0 || d_feat == 0 || d_text == 0) throw ConfigError("clips, d_feat and d_text must be positive");
  if (d_feat < 2) throw ConfigError("d_feat must be at least 2");
  if (step_types == 0) throw ConfigError("step_types must be positive");
  if (k_min == 0 || k_min > k_max) throw ConfigError("need 1 <= k_min <= k_max");
  if (k_max > step_types) throw ConfigError("k_max exceeds the step-type catalog");
  if (k_max > clips) throw ConfigError("k_max exceeds the clip count");
  if (eta_min < 0.0 || eta_max < eta_min) throw ConfigError("need 0 <= eta_min <= eta_max");
  if (!(difficulty_min > 0.0) || difficulty_max < difficulty_min) {
    throw ConfigError("need 0 < difficulty_min <= difficulty_max");
  }
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  static const std::vector<std::string> known = {
      "n_train", "n_test", "clips", "d_feat", "d_text", "step_types", "k_min", "k_max",
      "eta_min", "eta_max", "difficulty_min", "difficulty_max", "seed", "out_dir"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("generator config: unknown key '" + key + "'");
    }
  }
  GeneratorConfig c;
  try {
    c.n_train = read_field(j, "n_train", c.n_train);
    c.n_test = read_field(j, "n_test", c.n_test);
    c.clips = read_field(j, "clips", c.clips);
    c.d_feat = read_field(j, "d_feat", c.d_feat);
    c.d_text = read_field(j, "d_text", c.d_text);
    c.step_types = read_field(j, "step_types", c.step_types);
    c.k_min = read_field(j, "k_min", c.k_min);
    c.k_max = read_field(j, "k_max", c.k_max);
    c.eta_min = read_field(j, "eta_min", c.eta_min);
    c.eta_max = read_field(j, "eta_max", c.eta_max);
    c.difficulty_min = read_field(j, "difficulty_min", c.difficulty_min);
    c.difficulty_max = read_field(j, "difficulty_max", c.difficulty_max);
    c.seed = read_field(j, "seed", c.seed);
    c.out_dir = read_field(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.check();
  return c;
}

std::string generator_config_to_json(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["clips"] = c.clips;
  j["d_feat"] = c.d_feat;
  j["d_text"] = c.d_text;
  j["step_types"] = c.step_types;
  j["k_min"] = c.k_min;
  j["k_max"] = c.k_max;
  j["eta_min"] = c.eta_min;
  j["eta_max"] = c.eta_max;
  j["difficulty_min"] = c.difficulty_min;
  j["difficulty_max"] = c.difficulty_max;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j.dump(2);
}

void SyntheticSample::check() const {
  features.check();
  const auto k = steps.size();
  if (k == 0) throw DataError("sample '" + id() + "' has no steps");
  if (intervals.size() != k || qualities.size() != k) {
    throw DataError("sample '" + id() + "' has inconsistent per-step field lengths");
  }
  std::size_t expect = 1;
  for (const auto& iv : intervals) {
    if (iv.start != expect || iv.end < iv.start || iv.end > clips()) {
      throw DataError("sample '" + id() + "' intervals do not partition [1," + std::to_string(clips()) + "]");
    }
    expect = iv.end + 1;
  }
  if (expect != clips() + 1) {
    throw DataError("sample '" + id() + "' intervals do not cover all clips");
  }
  for (double q : qualities) {
    if (!(q >= 0.0 && q <= 1.0)) throw DataError("sample '" + id() + "' quality outside [0,1]");
  }
  if (!std::isfinite(label) || !(difficulty > 0.0) || !(eta >= 0.0)) {
    throw DataError("sample '" + id() + "' has invalid label, difficulty or eta");
  }
}

double subscore(double quality) { return 10.0 * quality; }

double raw_label(const std::vector<double>& qualities, double difficulty) {
  double s = 0.0;
  for (double q : qualities) s += subscore(q);
  return difficulty * s;
}

rubric::RubricSpec default_rubric(std::size_t step_types, bool difficulty_multiplier) {
  static const char* kStageNames[] = {"approach", "execution", "finish"};
  rubric::RubricSpec spec;
  spec.difficulty_multiplier = difficulty_multiplier;
  for (std::uint32_t i = 0; i < step_types; ++i) spec.step_types.push_back({i, "step_" + std::to_string(i)});
  const std::size_t stages = std::min<std::size_t>(3, step_types);
  for (std::size_t s = 0; s < stages; ++s) {
    rubric::Stage st{kStageNames[s], {}};
    const std::size_t lo = s * step_types / stages;
    const std::size_t hi = (s + 1) * step_types / stages;
    for (std::size_t i = lo; i < hi; ++i) st.members.push_back(static_cast<std::uint32_t>(i));
    spec.stages.push_back(std::move(st));
  }
  return spec;
}

namespace {

// Descriptors are built in id order so that rejection is reproducible; a
// process-wide cache keeps repeated lookups cheap.
const std::vector<std::vector<double>>& descriptor_table(std::uint32_t up_to, std::size_t d_text,
                                                         std::uint64_t seed) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::uint64_t>, std::vector<std::vector<double>>> cache;
  std::lock_guard lock(mu);
  auto& table = cache[{d_text, seed}];
  const rng::Key base = rng::Key(seed).derive(kDescriptorLabel);
  while (table.size() <= up_to) {
    const auto id = static_cast<std::uint32_t>(table.size());
    for (std::uint64_t attempt = 0;; ++attempt) {
      auto v = gaussian_vector(base.derive({id, attempt}), d_text);
      normalise(v);
      const bool ok = std::all_of(table.begin(), table.end(), [&](const auto& other) {
        return std::fabs(dot(v, other)) < kMaxDescriptorCosine;
      });
      if (ok) {
        table.push_back(std::move(v));
        break;
      }
      if (attempt > 10000) throw ConfigError("cannot draw distinct step descriptors; d_text too small");
    }
  }
  return table;
}

}  // namespace

std::vector<double> step_descriptor(std::uint32_t step_type, std::size_t d_text, std::uint64_t seed) {
  if (d_text == 0) throw ContractError("d_text must be positive");
  return descriptor_table(step_type, d_text, seed)[step_type];
}

Tensor step_descriptors(const std::vector<std::uint32_t>& steps, std::size_t d_text, std::uint64_t seed) {
  if (steps.empty()) throw ContractError("step_descriptors: no steps");
  Tensor out({steps.size(), d_text});
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto d = step_descriptor(steps[k], d_text, seed);
    std::copy(d.begin(), d.end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * d_text));
  }
  return out;
}

std::vector<double> quality_direction(std::size_t d_feat, std::uint64_t seed) {
  auto u = gaussian_vector(rng::Key(seed).derive(kQualityLabel), d_feat);
  normalise(u);
  return u;
}

std::vector<double> step_signature(std::uint32_t step_type, std::size_t d_feat, std::uint64_t seed) {
  const auto u = quality_direction(d_feat, seed);
  auto v = gaussian_vector(rng::Key(seed).derive({kSignatureLabel, step_type}), d_feat);
  const double p = dot(v, u);
  for (std::size_t i = 0; i < d_feat; ++i) v[i] -= p * u[i];
  normalise(v);
  return v;
}

SyntheticSample generate_sample(const GeneratorConfig& cfg, std::size_t index, const std::string& id) {
  const rng::Key key = rng::Key(cfg.seed).derive({kSampleLabel, index});
  rng::Stream st(key);
  SyntheticSample s;
  const auto k = static_cast<std::size_t>(st.integer(static_cast<std::int64_t>(cfg.k_min),
                                                     static_cast<std::int64_t>(cfg.k_max)));

  // K distinct step types in ascending order.
  std::vector<std::uint32_t> pool(cfg.step_types);
  std::iota(pool.begin(), pool.end(), 0U);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(st.integer(static_cast<std::int64_t>(i),
                                                       static_cast<std::int64_t>(pool.size() - 1)));
    std::swap(pool[i], pool[j]);
  }
  s.steps.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(s.steps.begin(), s.steps.end());

  // K-1 distinct cut points in [1, T-1]; step s ends at the s-th cut.
  std::vector<std::size_t> cuts(cfg.clips - 1);
  std::iota(cuts.begin(), cuts.end(), std::size_t{1});
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const auto j = static_cast<std::size_t>(st.integer(static_cast<std::int64_t>(i),
                                                       static_cast<std::int64_t>(cuts.size() - 1)));
    std::swap(cuts[i], cuts[j]);
  }
  cuts.resize(k - 1);
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(cfg.clips);
  std::size_t start = 1;
  for (auto end : cuts) {
    s.intervals.push_back({start, end});
    start = end + 1;
  }

  for (std::size_t i = 0; i < k; ++i) s.qualities.push_back(st.uniform());
  s.eta = cfg.eta_max > cfg.eta_min ? st.uniform(cfg.eta_min, cfg.eta_max) : cfg.eta_min;
  s.difficulty = cfg.difficulty_max > cfg.difficulty_min
                     ? st.uniform(cfg.difficulty_min, cfg.difficulty_max)
                     : cfg.difficulty_min;
  s.label = raw_label(s.qualities, s.difficulty);

  const auto u = quality_direction(cfg.d_feat, cfg.seed);
  const rng::Key noise = key.derive(kNoiseLabel);
  s.features.id = id;
  s.features.clips = cfg.clips;
  s.features.dim = cfg.d_feat;
  s.features.values.resize(cfg.clips * cfg.d_feat);
  for (std::size_t step = 0; step < k; ++step) {
    const auto sig = step_signature(s.steps[step], cfg.d_feat, cfg.seed);
    for (std::size_t t = s.intervals[step].start; t <= s.intervals[step].end; ++t) {
      const std::size_t row = (t - 1) * cfg.d_feat;
      for (std::size_t j = 0; j < cfg.d_feat; ++j) {
        const double v = sig[j] + s.qualities[step] * u[j] + s.eta * noise.normal(row + j);
        s.features.values[row + j] = static_cast<float>(v);
      }
    }
  }
  return s;
}

std::filesystem::path Manifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

const std::vector<std::filesystem::path>& Manifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("manifest must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "rubric_spec" && key != "train" && key != "test" && key != "seed" && key != "label_min" &&
        key != "label_max") {
      throw FormatError("manifest: unknown key '" + key + "'");
    }
  }
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    m.rubric_spec = j.at("rubric_spec").get<std::string>();
    for (const auto& p : j.at("train")) m.train.emplace_back(p.get<std::string>());
    for (const auto& p : j.at("test")) m.test.emplace_back(p.get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.label_min = j.at("label_min").get<double>();
    m.label_max = j.at("label_max").get<double>();
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!(m.label_max > m.label_min)) throw FormatError("manifest: label_max must exceed label_min");
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::ordered_json j;
  j["rubric_spec"] = m.rubric_spec.generic_string();
  j["train"] = json::array();
  for (const auto& p : m.train) j["train"].push_back(p.generic_string());
  j["test"] = json::array();
  for (const auto& p : m.test) j["test"].push_back(p.generic_string());
  j["seed"] = m.seed;
  j["label_min"] = m.label_min;
  j["label_max"] = m.label_max;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

Manifest generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir,
                          std::size_t threads) {
  cfg.check();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "samples", ec);
  if (ec) throw FormatError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());

  const std::size_t n = cfg.n_train + cfg.n_test;
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    const bool train = i < cfg.n_train;
    std::snprintf(buf, sizeof buf, "%s_%04zu", train ? "train" : "test", train ? i : i - cfg.n_train);
    ids[i] = buf;
  }

  std::vector<double> labels(n);
  std::vector<std::exception_ptr> errors(std::max<std::size_t>(threads, 1));
  auto work = [&](std::size_t w, std::size_t nw) {
    try {
      for (std::size_t i = w; i < n; i += nw) {
        const auto s = generate_sample(cfg, i, ids[i]);
        labels[i] = s.label;
        store_sample(out_dir / "samples" / (ids[i] + ".raqa"), s);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  const std::size_t nw = std::max<std::size_t>(threads, 1);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(work, w, nw);
  work(0, nw);
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const auto spec = default_rubric(cfg.step_types, cfg.difficulty_max > cfg.difficulty_min);
  rubric::save_rubric_spec(spec, out_dir / "rubric.json");

  Manifest m;
  m.base_dir = out_dir;
  m.rubric_spec = "rubric.json";
  for (std::size_t i = 0; i < n; ++i) {
    (i < cfg.n_train ? m.train : m.test).push_back(std::filesystem::path("samples") / (ids[i] + ".raqa"));
  }
  m.seed = cfg.seed;
  const auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
  m.label_min = *lo;
  m.label_max = *hi > *lo ? *hi : *lo + 1.0;
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

std::vector<std::uint8_t> encode_sample(const SyntheticSample& s) {
  s.check();
  Writer w;
  w.raw(kSampleMagic, 4);
  w.u32(kSampleVersion);
  w.u32(static_cast<std::uint32_t>(s.clips()));
  w.u32(static_cast<std::uint32_t>(s.features.dim));
  w.u32(static_cast<std::uint32_t>(s.steps.size()));
  for (std::size_t k = 0; k < s.steps.size(); ++k) {
    w.u32(s.steps[k]);
    w.u32(static_cast<std::uint32_t>(s.intervals[k].start));
    w.u32(static_cast<std::uint32_t>(s.intervals[k].end));
  }
  w.f64(s.label);
  w.f64(s.difficulty);
  w.f64(s.eta);
  for (double q : s.qualities) w.f64(q);
  for (float v : s.features.values) w.f32(v);
  return w.take();
}

SyntheticSample decode_sample(const std::vector<std::uint8_t>& bytes, const std::string& id) {
  const std::string what = "sample '" + id + "'";
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kSampleMagic, 4) != 0) {
    throw FormatError(what + ": bad magic (expected RAQA)");
  }
  Reader r(bytes, what);
  r.u32();  // magic
  const auto version = r.u32();
  if (version != kSampleVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version) + " (reader supports " +
                      std::to_string(kSampleVersion) + ")");
  }
  SyntheticSample s;
  s.features.id = id;
  s.features.clips = r.u32();
  s.features.dim = r.u32();
  const auto k = r.u32();
  // Guard allocations against corrupt headers before trusting the sizes.
  r.need(static_cast<std::size_t>(k) * 12);
  for (std::uint32_t i = 0; i < k; ++i) {
    s.steps.push_back(r.u32());
    const auto start = r.u32();
    const auto end = r.u32();
    s.intervals.push_back({start, end});
  }
  s.label = r.f64();
  s.difficulty = r.f64();
  s.eta = r.f64();
  r.need(static_cast<std::size_t>(k) * 8);
  for (std::uint32_t i = 0; i < k; ++i) s.qualities.push_back(r.f64());
  const std::size_t count = s.features.clips * s.features.dim;
  r.need(count * 4);
  s.features.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) s.features.values[i] = r.f32();
  if (r.pos() != r.size()) {
    throw FormatError(what + ": " + std::to_string(r.size() - r.pos()) + " trailing bytes");
  }
  s.check();
  return s;
}

void store_sample(const std::filesystem::path& path, const SyntheticSample& sample) {
  write_file(path, encode_sample(sample));
}

SyntheticSample load_sample(const std::filesystem::path& path) {
  return decode_sample(read_file(path), path.stem().string());
}

double normalise_label(double raw, double label_min, double label_max) {
  if (!(label_max > label_min)) throw ContractError("degenerate label range");
  return (raw - label_min) / (label_max - label_min);
}

double denormalise_label(double normalised, double label_min, double label_max) {
  return normalised * (label_max - label_min) + label_min;
}

double training_target(const SyntheticSample& s, const Manifest& m, bool difficulty_multiplier) {
  const double raw = difficulty_multiplier ? s.label / s.difficulty : s.label;
  return normalise_label(raw, m.label_min, m.label_max);
}

double normalised_prediction(double network_output, const SyntheticSample& s, const Manifest& m,
                             bool difficulty_multiplier) {
  if (!difficulty_multiplier) return network_output;
  const double raw = s.difficulty * denormalise_label(network_output, m.label_min, m.label_max);
  return normalise_label(raw, m.label_min, m.label_max);
}

std::vector<std::size_t> oracle_peaks(const SyntheticSample& s, std::uint64_t seed) {
  const std::size_t d = s.features.dim;
  std::vector<std::size_t> peaks;
  for (auto type : s.steps) {
    const auto sig = step_signature(type, d, seed);
    std::size_t best = 1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < s.clips(); ++t) {
      double p = 0.0;
      for (std::size_t j = 0; j < d; ++j) p += sig[j] * s.features.values[t * d + j];
      if (p > best_score) {
        best_score = p;
        best = t + 1;
      }
    }
    peaks.push_back(best);
  }
  return peaks;
}

}  // namespace rica::data

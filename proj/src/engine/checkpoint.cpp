#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "rica/engine.hpp"
#include "rica/error.hpp"

namespace rica::engine {
namespace {

using nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) {
  out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  put_bytes(out, name);
  put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    const auto f = static_cast<float>(v);
    if (static_cast<double>(f) != v) {
      throw ContractError("checkpoint tensor '" + name + "' is not representable in float32");
    }
    std::uint32_t b;
    std::memcpy(&b, &f, 4);
    put_u32(out, b);
  }
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

NamedTensor read_tensor(Cursor& c) {
  NamedTensor nt;
  nt.name = c.bytes(c.u32());
  const auto rank = c.u32();
  if (rank == 0 || rank > 2) throw FormatError("checkpoint tensor '" + nt.name + "' has rank " + std::to_string(rank));
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(c.u32());
    count *= shape.back();
  }
  if (count == 0) throw FormatError("checkpoint tensor '" + nt.name + "' is empty");
  c.need(count * 4);
  std::vector<double> values(count);
  for (auto& v : values) {
    const std::uint32_t b = c.u32();
    float f;
    std::memcpy(&f, &b, 4);
    v = f;
  }
  nt.value = Tensor(shape, std::move(values));
  return nt;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  nlohmann::ordered_json meta;
  meta["config"] = json::parse(run_config_to_json(ck.config));
  meta["epoch"] = ck.epoch;
  meta["optimizer_step"] = ck.optimizer.step;
  // Noise streams are keyed by (seed, step, sample), so this is the full
  // generator state.
  meta["rng"] = {{"seed", ck.config.seed}, {"step", ck.optimizer.step}};
  meta["rubric"] = rubric::rubric_to_json(ck.rubric);
  meta["data"] = {{"seed", ck.manifest.seed},
                  {"label_min", ck.manifest.label_min},
                  {"label_max", ck.manifest.label_max}};
  const std::string blob = meta.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  put_bytes(out, blob);

  const auto& ps = ck.params.params;
  const bool with_moments = ck.optimizer.first_moment.size() == ps.size();
  put_u32(out, static_cast<std::uint32_t>(ps.size() * (with_moments ? 3 : 1)));
  for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(out, ps.name(i), ps.value(i));
  if (with_moments) {
    for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(out, "adam.m." + ps.name(i), ck.optimizer.first_moment[i]);
    for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(out, "adam.v." + ps.name(i), ck.optimizer.second_moment[i]);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic, expected RACK)");
  }
  Cursor c(bytes);
  c.bytes(4);
  const auto version = c.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  json meta;
  try {
    meta = json::parse(c.bytes(c.u32()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.config = run_config_from_json(meta.at("config").dump());
    ck.epoch = meta.at("epoch").get<std::size_t>();
    ck.optimizer.step = meta.at("optimizer_step").get<std::uint64_t>();
    ck.rubric = rubric::rubric_from_json(meta.at("rubric"));
    const auto& d = meta.at("data");
    ck.manifest.seed = d.at("seed").get<std::uint64_t>();
    ck.manifest.label_min = d.at("label_min").get<double>();
    ck.manifest.label_max = d.at("label_max").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }

  ck.params = model::init_model(ck.config.model, ck.config.seed);
  auto& ps = ck.params.params;
  const auto count = c.u32();
  std::vector<bool> seen(ps.size(), false);
  std::vector<Tensor> m(ps.size());
  std::vector<Tensor> v(ps.size());
  std::size_t moments = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto nt = read_tensor(c);
    std::string name = nt.name;
    std::vector<Tensor>* slot = nullptr;
    if (name.rfind("adam.m.", 0) == 0) {
      slot = &m;
      name = name.substr(7);
    } else if (name.rfind("adam.v.", 0) == 0) {
      slot = &v;
      name = name.substr(7);
    }
    const auto idx = ps.find(name);
    if (!idx) throw FormatError("checkpoint has unknown tensor '" + nt.name + "'");
    if (nt.value.shape() != ps.value(*idx).shape()) {
      throw FormatError("checkpoint tensor '" + nt.name + "' has shape " + shape_string(nt.value.shape()) +
                        ", model expects " + shape_string(ps.value(*idx).shape()));
    }
    if (slot) {
      (*slot)[*idx] = std::move(nt.value);
      ++moments;
    } else {
      ps.value(*idx) = std::move(nt.value);
      seen[*idx] = true;
    }
  }
  if (!c.done()) throw FormatError("checkpoint has trailing bytes");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!seen[i]) throw FormatError("checkpoint is missing tensor '" + ps.name(i) + "'");
  }

  const auto& o = ck.config.optimizer;
  ck.optimizer.hyper = {o.lr_head, o.beta1, o.beta2, o.eps, o.weight_decay};
  ck.optimizer.storage = optim::Storage::kFloat32;
  if (moments == 0) {
    ck.optimizer.reset(ps.values());
  } else {
    if (moments != 2 * ps.size()) throw FormatError("checkpoint has an incomplete optimizer state");
    ck.optimizer.first_moment = std::move(m);
    ck.optimizer.second_moment = std::move(v);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write then rename so an interrupted save never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace rica::engine

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include <gtest/gtest.h>

#include "rica/data.hpp"
#include "rica/error.hpp"

using namespace rica;
namespace fs = std::filesystem;

namespace {

data::GeneratorConfig tiny(std::uint64_t seed = 3) {
  data::GeneratorConfig c;
  c.n_train = 6;
  c.n_test = 3;
  c.clips = 10;
  c.d_feat = 8;
  c.d_text = 8;
  c.step_types = 5;
  c.k_min = 2;
  c.k_max = 4;
  c.seed = seed;
  return c;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Generate, SameSeedIsByteIdentical) {
  const auto a = fresh_dir("rica_gen_a");
  const auto b = fresh_dir("rica_gen_b");
  data::generate_dataset(tiny(), a);
  data::generate_dataset(tiny(), b, 2);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 9u + 2u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Generate, FullSizeLayoutAndSplits) {
  const auto dir = fresh_dir("rica_gen_full");
  const data::GeneratorConfig cfg;  // 500 + 150, T 24, D_feat 32, K in [2, 5]
  const auto m = data::generate_dataset(cfg, dir);
  EXPECT_EQ(m.train.size(), 500u);
  EXPECT_EQ(m.test.size(), 150u);
  std::size_t samples = 0;
  for (const auto& e : fs::directory_iterator(dir / "samples")) samples += e.is_regular_file();
  EXPECT_EQ(samples, 650u);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));

  std::set<fs::path> train(m.train.begin(), m.train.end());
  for (const auto& p : m.test) EXPECT_EQ(train.count(p), 0u);

  const auto loaded = data::load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.train, m.train);
  EXPECT_EQ(loaded.test, m.test);
  for (const auto* split : {&m.train, &m.test}) {
    for (const auto& p : *split) {
      const auto s = data::load_sample(m.resolve(p));
      EXPECT_EQ(s.clips(), 24u);
      EXPECT_EQ(s.features.dim, 32u);
      EXPECT_GE(s.steps.size(), 2u);
      EXPECT_LE(s.steps.size(), 5u);
      const double y = data::normalise_label(s.label, m.label_min, m.label_max);
      EXPECT_GE(y, 0.0);
      EXPECT_LE(y, 1.0);
    }
  }
  fs::remove_all(dir);
}

TEST(Generate, ConfigErrors) {
  auto c = tiny();
  c.k_max = 9;
  EXPECT_THROW(c.check(), ConfigError);
  c = tiny();
  c.eta_min = 0.6;
  EXPECT_THROW(c.check(), ConfigError);
  EXPECT_THROW(data::generator_config_from_json(R"({"n_train": 3, "bogus": 1})"), ConfigError);
  EXPECT_EQ(data::generator_config_from_json(data::generator_config_to_json(tiny())), tiny());
}

TEST(Generate, NoiselessFeaturesDetermineLabels) {
  auto cfg = tiny(11);
  cfg.eta_min = cfg.eta_max = 0.0;
  const auto qdir = data::quality_direction(cfg.d_feat, cfg.seed);
  std::size_t hits = 0, pairs = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto s = data::generate_sample(cfg, i, "x" + std::to_string(i));
    ASSERT_NO_THROW(s.check());
    // Quality is read back off the features; the label follows from it alone.
    std::vector<double> q;
    for (std::size_t k = 0; k < s.steps.size(); ++k) {
      const auto sig = data::step_signature(s.steps[k], cfg.d_feat, cfg.seed);
      EXPECT_NEAR(dot(sig, qdir), 0.0, 1e-12);
      double acc = 0;
      const auto [a, b] = s.intervals[k];
      for (std::size_t t = a; t <= b; ++t) {
        std::vector<double> row(s.features.values.begin() + static_cast<std::ptrdiff_t>((t - 1) * cfg.d_feat),
                                s.features.values.begin() + static_cast<std::ptrdiff_t>(t * cfg.d_feat));
        acc += dot(row, qdir);
      }
      q.push_back(acc / static_cast<double>(b - a + 1));
      EXPECT_NEAR(q.back(), s.qualities[k], 1e-5);
    }
    EXPECT_NEAR(data::raw_label(q, s.difficulty), s.label, 1e-3);

    const auto peaks = data::oracle_peaks(s, cfg.seed);
    for (std::size_t k = 0; k < peaks.size(); ++k, ++pairs) {
      hits += peaks[k] >= s.intervals[k].start && peaks[k] <= s.intervals[k].end;
    }
  }
  EXPECT_EQ(hits, pairs);
}

TEST(Descriptors, DeterministicUnitAndSeparated) {
  EXPECT_EQ(data::step_descriptor(3, 16, 1), data::step_descriptor(3, 16, 1));
  std::vector<std::vector<double>> all;
  for (std::uint32_t id = 0; id < 12; ++id) {
    all.push_back(data::step_descriptor(id, 16, 1));
    EXPECT_NEAR(dot(all.back(), all.back()), 1.0, 1e-12);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) EXPECT_LT(std::abs(dot(all[i], all[j])), data::kMaxDescriptorCosine);
  }
  const auto t = data::step_descriptors({2, 5, 2}, 16, 1);
  EXPECT_EQ(t.shape(), (Shape{3, 16}));
  EXPECT_EQ(t.row(0), t.row(2));
}

TEST(SampleFormat, RoundTrip) {
  const auto s = data::generate_sample(tiny(), 4, "round");
  EXPECT_EQ(data::decode_sample(data::encode_sample(s), "round"), s);
  const auto path = fs::temp_directory_path() / "round.bin";
  data::store_sample(path, s);
  EXPECT_EQ(data::load_sample(path), s);
  fs::remove(path);
}

TEST(SampleFormat, BadMagicVersionAndTruncation) {
  const auto bytes = data::encode_sample(data::generate_sample(tiny(), 1, "f"));
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(data::decode_sample(magic, "f"), FormatError);

  auto version = bytes;
  version[4] = 2;
  try {
    data::decode_sample(version, "f");
    FAIL() << "version 2 accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(data::decode_sample({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)}, "f"),
                 FormatError)
        << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(data::decode_sample(trailing, "f"), FormatError);
}

TEST(Labels, NormaliseRoundTrip) {
  EXPECT_DOUBLE_EQ(data::normalise_label(15, 10, 30), 0.25);
  EXPECT_DOUBLE_EQ(data::denormalise_label(0.25, 10, 30), 15.0);
  EXPECT_EQ(data::raw_label({0.0, 1.0}, 2.0), 2.0 * (data::subscore(0.0) + data::subscore(1.0)));
}

TEST(DefaultRubric, ThreeStagesOfConsecutiveIds) {
  const auto r = data::default_rubric(8);
  ASSERT_EQ(r.stages.size(), 3u);
  EXPECT_EQ(r.step_types.size(), 8u);
  std::vector<std::uint32_t> flat;
  for (const auto& st : r.stages) flat.insert(flat.end(), st.members.begin(), st.members.end());
  EXPECT_TRUE(std::is_sorted(flat.begin(), flat.end()));
  EXPECT_EQ(flat.size(), 8u);
}

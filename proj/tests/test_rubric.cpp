#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "rica/error.hpp"
#include "rica/model.hpp"
#include "rica/rng.hpp"
#include "rica/rubric.hpp"
#include "rica/stochastic.hpp"

using namespace rica;
using rubric::NodeKind;

namespace {

rubric::RubricSpec three_types() {
  rubric::RubricSpec spec;
  spec.step_types = {{1, "takeoff"}, {2, "flight"}, {3, "entry"}};
  spec.stages = {{"A", {1, 2}}, {"B", {3}}};
  return spec;
}

std::size_t count(const rubric::RubricDag& dag, NodeKind kind) {
  return static_cast<std::size_t>(std::count_if(dag.nodes().begin(), dag.nodes().end(),
                                                [&](const auto& n) { return n.kind == kind; }));
}

rubric::RubricSpec random_spec(rng::Stream& st) {
  rubric::RubricSpec spec;
  const auto n = static_cast<std::uint32_t>(st.integer(1, 9));
  for (std::uint32_t i = 0; i < n; ++i) spec.step_types.push_back({i * 3 + 1, "t" + std::to_string(i)});
  std::vector<std::uint32_t> pool;
  for (const auto& s : spec.step_types) {
    if (st.uniform() < 0.8) pool.push_back(s.id);
  }
  while (!pool.empty()) {
    const auto take = static_cast<std::size_t>(st.integer(1, static_cast<std::int64_t>(pool.size())));
    spec.stages.push_back({"s" + std::to_string(spec.stages.size()), {pool.begin(), pool.begin() + take}});
    pool.erase(pool.begin(), pool.begin() + take);
  }
  return spec;
}

std::vector<std::uint32_t> random_steps(rng::Stream& st, const rubric::RubricSpec& spec) {
  std::vector<std::uint32_t> steps;
  const auto k = st.integer(1, 6);
  for (std::int64_t i = 0; i < k; ++i) {
    steps.push_back(spec.step_types[static_cast<std::size_t>(
                                        st.integer(0, static_cast<std::int64_t>(spec.step_types.size()) - 1))]
                        .id);
  }
  return steps;
}

}  // namespace

TEST(BuildDag, TwoStagesThreeSteps) {
  const std::uint32_t steps[] = {1, 2, 3};
  const auto dag = rubric::build_dag(three_types(), steps);
  EXPECT_EQ(dag.nodes().size(), 6u);
  EXPECT_EQ(dag.edges().size(), 5u);
  EXPECT_EQ(count(dag, NodeKind::kLeaf), 3u);
  EXPECT_EQ(count(dag, NodeKind::kIntermediate), 2u);
  EXPECT_EQ(count(dag, NodeKind::kRoot), 1u);
  EXPECT_TRUE(rubric::validate(dag).empty());
}

TEST(BuildDag, SingleStepNoStages) {
  rubric::RubricSpec spec;
  spec.step_types = {{0, "only"}};
  const std::uint32_t steps[] = {0};
  const auto dag = rubric::build_dag(spec, steps);
  ASSERT_EQ(dag.nodes().size(), 2u);
  ASSERT_EQ(dag.edges().size(), 1u);
  EXPECT_EQ(dag.edges()[0], (rubric::DagEdge{0, 1}));
}

TEST(BuildDag, RepeatedStepTypeGivesTwoLeaves) {
  const std::uint32_t steps[] = {1, 1, 3};
  const auto dag = rubric::build_dag(three_types(), steps);
  ASSERT_EQ(dag.leaves().size(), 3u);
  EXPECT_EQ(dag.nodes()[dag.leaves()[0]].step_type, 1u);
  EXPECT_EQ(dag.nodes()[dag.leaves()[1]].step_type, 1u);
  EXPECT_NE(dag.leaves()[0], dag.leaves()[1]);
}

TEST(BuildDag, UnstagedStepFeedsRoot) {
  auto spec = three_types();
  spec.stages = {{"A", {1}}};
  const std::uint32_t steps[] = {1, 3};
  const auto dag = rubric::build_dag(spec, steps);
  const auto root = *dag.root();
  const auto& preds = dag.predecessors(root);
  EXPECT_NE(std::find(preds.begin(), preds.end(), dag.leaves()[1]), preds.end());
}

TEST(BuildDag, Errors) {
  const std::vector<std::uint32_t> none;
  EXPECT_THROW(rubric::build_dag(three_types(), none), ConfigError);
  const std::uint32_t unknown[] = {1, 9};
  EXPECT_THROW(rubric::build_dag(three_types(), unknown), ConfigError);
}

TEST(Validate, ReportsViolations) {
  using rubric::DagNode;
  const std::vector<DagNode> nodes = {{0, NodeKind::kLeaf, 1}, {1, NodeKind::kIntermediate, {}},
                                      {2, NodeKind::kRoot, {}}};
  const rubric::RubricDag ok(nodes, {{0, 1}, {1, 2}});
  EXPECT_TRUE(rubric::validate(ok).empty());

  const rubric::RubricDag cyc({{0, NodeKind::kLeaf, 1}, {1, NodeKind::kIntermediate, {}},
                               {2, NodeKind::kIntermediate, {}}, {3, NodeKind::kRoot, {}}},
                              {{0, 1}, {1, 2}, {2, 1}, {2, 3}});
  const auto v = rubric::validate(cyc);
  EXPECT_NE(std::find(v.begin(), v.end(), "acyclicity"), v.end());
  EXPECT_THROW(rubric::topological_order(cyc), ContractError);

  const rubric::RubricDag two_roots({{0, NodeKind::kLeaf, 1}, {1, NodeKind::kRoot, {}}, {2, NodeKind::kRoot, {}}},
                                    {{0, 1}, {0, 2}});
  const auto w = rubric::validate(two_roots);
  EXPECT_NE(std::find(w.begin(), w.end(), "single root"), w.end());
}

TEST(TopologicalOrder, ChainAndDiamond) {
  using rubric::DagNode;
  const rubric::RubricDag chain({{0, NodeKind::kLeaf, 1}, {1, NodeKind::kIntermediate, {}}, {2, NodeKind::kRoot, {}}},
                                {{0, 1}, {1, 2}});
  EXPECT_EQ(rubric::topological_order(chain), (std::vector<std::size_t>{0, 1, 2}));
  const rubric::RubricDag diamond({{0, NodeKind::kLeaf, 1}, {1, NodeKind::kLeaf, 2},
                                   {2, NodeKind::kIntermediate, {}}, {3, NodeKind::kRoot, {}}},
                                  {{1, 2}, {0, 2}, {2, 3}});
  // Ties among ready nodes go to the smaller id.
  EXPECT_EQ(rubric::topological_order(diamond), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(RubricSpec, CheckRejectsBadStages) {
  auto spec = three_types();
  spec.stages = {{"A", {1, 2}}, {"A", {3}}};
  EXPECT_THROW(spec.check(), ConfigError);
  spec.stages = {{"A", {}}};
  EXPECT_THROW(spec.check(), ConfigError);
  spec.stages = {{"A", {1}}, {"B", {1}}};
  EXPECT_THROW(spec.check(), ConfigError);
  spec.stages = {{"A", {7}}};
  EXPECT_THROW(spec.check(), ConfigError);
}

TEST(RubricSpec, JsonRoundTripAndUnknownKeys) {
  const auto spec = three_types();
  EXPECT_EQ(rubric::rubric_from_json(rubric::rubric_to_json(spec)), spec);
  auto j = rubric::rubric_to_json(spec);
  j["weights"] = 1;
  EXPECT_THROW(rubric::rubric_from_json(j), ConfigError);
  auto k = rubric::rubric_to_json(spec);
  k["stages"][0]["extra"] = true;
  EXPECT_THROW(rubric::rubric_from_json(k), ConfigError);
}

TEST(RubricSpec, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rica_test_rubric.json";
  rubric::save_rubric_spec(three_types(), path);
  EXPECT_EQ(rubric::load_rubric_spec(path), three_types());
  std::filesystem::remove(path);
}

class DagProperties : public ::testing::TestWithParam<int> {};

TEST_P(DagProperties, BuiltDagsAreWellFormedAndCounted) {
  rng::Stream st(rng::Key(static_cast<std::uint64_t>(GetParam())));
  const auto spec = random_spec(st);
  const auto steps = random_steps(st, spec);
  const auto dag = rubric::build_dag(spec, steps);
  EXPECT_TRUE(rubric::validate(dag).empty());

  std::vector<std::size_t> occupied;
  bool all_staged = true;
  for (auto s : steps) {
    const auto stage = spec.stage_of(s);
    if (stage) {
      if (std::find(occupied.begin(), occupied.end(), *stage) == occupied.end()) occupied.push_back(*stage);
    } else {
      all_staged = false;
    }
  }
  EXPECT_EQ(dag.nodes().size(), steps.size() + occupied.size() + 1);
  if (all_staged) {
    EXPECT_EQ(dag.edges().size(), steps.size() + occupied.size());
  }
  for (std::size_t k = 0; k < steps.size(); ++k) EXPECT_EQ(dag.nodes()[dag.leaves()[k]].step_type, steps[k]);

  // Topological order: every edge goes forward.
  const auto& order = dag.topo_order();
  std::vector<std::size_t> pos(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (const auto& e : dag.edges()) EXPECT_LT(pos[e.from], pos[e.to]);
  EXPECT_EQ(order.back(), *dag.root());
}

TEST_P(DagProperties, StageDeclarationOrderDoesNotChangeScores) {
  rng::Stream st(rng::Key(1000 + static_cast<std::uint64_t>(GetParam())));
  const auto spec = random_spec(st);
  const auto steps = random_steps(st, spec);
  auto reversed = spec;
  std::reverse(reversed.stages.begin(), reversed.stages.end());

  model::ModelConfig mc;
  mc.d_model = 8;
  mc.aggregator_hidden = 8;
  const auto params = model::init_model(mc, 3);
  const auto leaves = stochastic::standard_normal(rng::Key(GetParam()), steps.size(), mc.d_model);
  auto root = [&](const rubric::RubricSpec& s) {
    ad::Graph g;
    model::Bound b(g, params);
    return model::propagate_scores(b, rubric::build_dag(s, steps), g.constant(leaves)).value();
  };
  const auto a = root(spec);
  const auto b = root(reversed);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Seeds, DagProperties, ::testing::Range(0, 40));

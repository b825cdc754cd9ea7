#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Steps and scoring rubric of a task, and the per-video DAG built from them.
namespace rica::rubric {

struct StepType {
  std::uint32_t id = 0;
  std::string name;
};

struct Stage {
  std::string id;
  std::vector<std::uint32_t> members;
};

// Task-level rubric. Loaded once per task; a DAG is derived from it for every
// video according to the steps that video actually contains.
struct RubricSpec {
  std::vector<StepType> step_types;
  std::vector<Stage> stages;
  bool difficulty_multiplier = false;
  // False for tasks whose steps have no fixed temporal order; the temporal
  // auxiliary losses are disabled for them.
  bool ordered_steps = true;

  bool has_step(std::uint32_t id) const;
  // Index into `stages` of the stage containing the step type, if any.
  std::optional<std::size_t> stage_of(std::uint32_t id) const;

  // Throws ConfigError on duplicate ids, empty stages, unknown members, or a
  // step type listed in two stages.
  void check() const;

  friend bool operator==(const RubricSpec&, const RubricSpec&);
};

RubricSpec rubric_from_json(const nlohmann::json& j);
nlohmann::json rubric_to_json(const RubricSpec& spec);
RubricSpec load_rubric_spec(const std::filesystem::path& path);
void save_rubric_spec(const RubricSpec& spec, const std::filesystem::path& path);

enum class NodeKind : std::uint8_t { kLeaf, kIntermediate, kRoot };

struct DagNode {
  std::size_t id = 0;
  NodeKind kind = NodeKind::kLeaf;
  std::optional<std::uint32_t> step_type;  // leaves only
};

struct DagEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  friend bool operator==(const DagEdge&, const DagEdge&) = default;
};

class RubricDag {
 public:
  RubricDag() = default;
  // Node ids must equal their positions in `nodes`.
  RubricDag(std::vector<DagNode> nodes, std::vector<DagEdge> edges);

  const std::vector<DagNode>& nodes() const { return nodes_; }
  const std::vector<DagEdge>& edges() const { return edges_; }
  // Leaf ids in ascending id order, which build_dag makes the step order.
  const std::vector<std::size_t>& leaves() const { return leaves_; }
  // Direct predecessors of a node in ascending id order.
  const std::vector<std::size_t>& predecessors(std::size_t id) const { return preds_[id]; }
  std::optional<std::size_t> root() const;
  // Cached topological order; empty when the graph has a cycle.
  const std::vector<std::size_t>& topo_order() const { return topo_; }

 private:
  std::vector<DagNode> nodes_;
  std::vector<DagEdge> edges_;
  std::vector<std::size_t> leaves_;
  std::vector<std::vector<std::size_t>> preds_;
  std::vector<std::size_t> topo_;
};

// One leaf per performed step (ids 0..K-1 in step order), one intermediate
// node per stage with at least one performed member (in order of first
// occurrence among the steps), then the root. Steps outside every stage feed
// the root directly.
RubricDag build_dag(const RubricSpec& spec, std::span<const std::uint32_t> steps);

// Names of all violated DAG invariants; empty means well-formed.
std::vector<std::string> validate(const RubricDag& dag);

// Kahn's algorithm, releasing ready nodes in ascending id order. Throws
// ContractError if the graph has a cycle.
std::vector<std::size_t> topological_order(const RubricDag& dag);

}  // namespace rica::rubric

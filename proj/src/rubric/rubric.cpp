#include "rica/rubric.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <queue>
#include <set>

#include "rica/error.hpp"

namespace rica::rubric {
namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T required(const nlohmann::json& j, const char* key, std::string_view where) {
  if (!j.contains(key)) {
    throw ConfigError("missing key '" + std::string(key) + "' in " + std::string(where));
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + std::string(where) +
                      ": " + e.what());
  }
}

}  // namespace

bool RubricSpec::has_step(std::uint32_t id) const {
  return std::any_of(step_types.begin(), step_types.end(),
                     [id](const StepType& s) { return s.id == id; });
}

std::optional<std::size_t> RubricSpec::stage_of(std::uint32_t id) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& m = stages[i].members;
    if (std::find(m.begin(), m.end(), id) != m.end()) return i;
  }
  return std::nullopt;
}

void RubricSpec::check() const {
  if (step_types.empty()) throw ConfigError("rubric has no step types");
  std::set<std::uint32_t> ids;
  for (const auto& s : step_types) {
    if (!ids.insert(s.id).second) {
      throw ConfigError("duplicate step type id " + std::to_string(s.id));
    }
  }
  std::set<std::string> stage_ids;
  std::set<std::uint32_t> staged;
  for (const auto& st : stages) {
    if (!stage_ids.insert(st.id).second) throw ConfigError("duplicate stage id '" + st.id + "'");
    if (st.members.empty()) throw ConfigError("stage '" + st.id + "' has no members");
    for (auto m : st.members) {
      if (!ids.contains(m)) {
        throw ConfigError("stage '" + st.id + "' lists unknown step type " + std::to_string(m));
      }
      if (!staged.insert(m).second) {
        throw ConfigError("step type " + std::to_string(m) + " belongs to more than one stage");
      }
    }
  }
}

bool operator==(const RubricSpec& a, const RubricSpec& b) {
  return rubric_to_json(a) == rubric_to_json(b);
}

RubricSpec rubric_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"step_types", "stages", "difficulty_multiplier", "ordered_steps"},
                      "rubric spec");
  RubricSpec spec;
  const auto& steps = j.contains("step_types") ? j.at("step_types") : nlohmann::json();
  if (!steps.is_array()) throw ConfigError("rubric spec needs a 'step_types' array");
  for (const auto& s : steps) {
    reject_unknown_keys(s, {"id", "name"}, "step type");
    spec.step_types.push_back(
        {required<std::uint32_t>(s, "id", "step type"), required<std::string>(s, "name", "step type")});
  }
  if (j.contains("stages")) {
    if (!j.at("stages").is_array()) throw ConfigError("'stages' must be an array");
    for (const auto& st : j.at("stages")) {
      reject_unknown_keys(st, {"id", "members"}, "stage");
      spec.stages.push_back({required<std::string>(st, "id", "stage"),
                             required<std::vector<std::uint32_t>>(st, "members", "stage")});
    }
  }
  if (j.contains("difficulty_multiplier")) {
    spec.difficulty_multiplier = required<bool>(j, "difficulty_multiplier", "rubric spec");
  }
  if (j.contains("ordered_steps")) {
    spec.ordered_steps = required<bool>(j, "ordered_steps", "rubric spec");
  }
  spec.check();
  return spec;
}

nlohmann::json rubric_to_json(const RubricSpec& spec) {
  nlohmann::json j;
  j["step_types"] = nlohmann::json::array();
  for (const auto& s : spec.step_types) j["step_types"].push_back({{"id", s.id}, {"name", s.name}});
  j["stages"] = nlohmann::json::array();
  for (const auto& st : spec.stages) j["stages"].push_back({{"id", st.id}, {"members", st.members}});
  j["difficulty_multiplier"] = spec.difficulty_multiplier;
  j["ordered_steps"] = spec.ordered_steps;
  return j;
}

RubricSpec load_rubric_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rubric spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("rubric spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return rubric_from_json(j);
}

void save_rubric_spec(const RubricSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write rubric spec " + path.string());
  out << rubric_to_json(spec).dump(2) << '\n';
}

RubricDag::RubricDag(std::vector<DagNode> nodes, std::vector<DagEdge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  preds_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != i) throw ContractError("DAG node ids must match their positions");
    if (nodes_[i].kind == NodeKind::kLeaf) leaves_.push_back(i);
  }
  for (const auto& e : edges_) {
    if (e.from < nodes_.size() && e.to < nodes_.size()) preds_[e.to].push_back(e.from);
  }
  for (auto& p : preds_) std::sort(p.begin(), p.end());
  try {
    topo_ = topological_order(*this);
  } catch (const ContractError&) {
    topo_.clear();
  }
}

std::optional<std::size_t> RubricDag::root() const {
  std::optional<std::size_t> found;
  for (const auto& n : nodes_) {
    if (n.kind == NodeKind::kRoot) {
      if (found) return std::nullopt;
      found = n.id;
    }
  }
  return found;
}

RubricDag build_dag(const RubricSpec& spec, std::span<const std::uint32_t> steps) {
  if (steps.empty()) throw ConfigError("cannot build a rubric DAG from an empty step list");
  std::vector<DagNode> nodes;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!spec.has_step(steps[i])) {
      throw ConfigError("step type " + std::to_string(steps[i]) + " is not in the rubric");
    }
    nodes.push_back({i, NodeKind::kLeaf, steps[i]});
  }

  // Intermediate nodes in order of first occurrence, so stage declaration
  // order in the spec does not change node numbering.
  std::vector<std::size_t> stage_node(spec.stages.size(), 0);
  std::vector<bool> has_node(spec.stages.size(), false);
  std::vector<std::size_t> stage_nodes;
  for (auto s : steps) {
    if (auto st = spec.stage_of(s); st && !has_node[*st]) {
      has_node[*st] = true;
      stage_node[*st] = nodes.size();
      stage_nodes.push_back(nodes.size());
      nodes.push_back({nodes.size(), NodeKind::kIntermediate, std::nullopt});
    }
  }
  const std::size_t root = nodes.size();
  nodes.push_back({root, NodeKind::kRoot, std::nullopt});

  std::vector<DagEdge> edges;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (auto st = spec.stage_of(steps[i])) edges.push_back({i, stage_node[*st]});
    else edges.push_back({i, root});
  }
  for (auto n : stage_nodes) edges.push_back({n, root});
  return RubricDag(std::move(nodes), std::move(edges));
}

std::vector<std::string> validate(const RubricDag& dag) {
  std::vector<std::string> violations;
  const auto& nodes = dag.nodes();
  const auto n = nodes.size();
  if (n == 0) return {"non-empty"};

  std::size_t roots = 0;
  bool bad_endpoint = false;
  for (const auto& node : nodes) roots += node.kind == NodeKind::kRoot;
  if (roots != 1) violations.emplace_back("single root");

  for (const auto& e : dag.edges()) bad_endpoint = bad_endpoint || e.from >= n || e.to >= n;
  if (bad_endpoint) violations.emplace_back("edge endpoints");

  bool root_out = false;
  bool leaf_in = false;
  bool leaf_type = false;
  for (const auto& e : dag.edges()) {
    if (e.from >= n || e.to >= n) continue;
    if (nodes[e.from].kind == NodeKind::kRoot) root_out = true;
    if (nodes[e.to].kind == NodeKind::kLeaf) leaf_in = true;
  }
  for (const auto& node : nodes) {
    if ((node.kind == NodeKind::kLeaf) != node.step_type.has_value()) leaf_type = true;
  }
  if (root_out) violations.emplace_back("root has no outgoing edges");
  if (leaf_in) violations.emplace_back("leaves have no incoming edges");
  if (leaf_type) violations.emplace_back("leaf step types");

  if (dag.topo_order().size() != n) violations.emplace_back("acyclicity");

  // Every node reaches the root: walk edges backwards from the root.
  if (roots == 1) {
    const auto root = *dag.root();
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{root};
    seen[root] = true;
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto p : dag.predecessors(v)) {
        if (!seen[p]) {
          seen[p] = true;
          stack.push_back(p);
        }
      }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      violations.emplace_back("reaches root");
    }
  }
  return violations;
}

std::vector<std::size_t> topological_order(const RubricDag& dag) {
  const auto n = dag.nodes().size();
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> succ(n);
  for (const auto& e : dag.edges()) {
    if (e.from >= n || e.to >= n) throw ContractError("edge references a missing node");
    succ[e.from].push_back(e.to);
    ++indegree[e.to];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const auto v = ready.top();
    ready.pop();
    order.push_back(v);
    for (auto s : succ[v]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (order.size() != n) throw ContractError("rubric graph contains a cycle");
  return order;
}

}  // namespace rica::rubric

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "rica/tensor.hpp"

// Define-by-run reverse-mode automatic differentiation.
//
// A Graph records every primitive applied to its Vars in execution order, so
// node inputs always precede the node and the node list is already a
// topological order. Graphs are built per forward pass and are confined to
// one thread; parameters can be shared read-only between concurrent graphs
// through Graph::parameter.
namespace rica::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSum,
  kMean,
  kSumRows,
  kMeanRows,
  kSumCols,
  kExp,
  kLog,
  kGelu,
  kRelu,
  kAbs,
  kClamp,
  kSoftmaxRows,
  kLayerNormRows,
  kConcat,
  kSlice,
  kTranspose,
};

std::string_view op_name(Op op);

// Default variance floor of layer_norm_rows.
inline constexpr double kLayerNormEps = 1e-9;

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients of a scalar output with respect to every leaf that requires them.
class Gradients {
 public:
  // Gradient of a leaf; a zero tensor if no path reached it.
  const Tensor& operator[](Var v) const;
  bool has(Var v) const;

 private:
  friend class Graph;
  std::vector<Tensor> grads_;
  mutable std::map<std::size_t, Tensor> zeros_;
};

struct OpAttr {
  double a = 0.0;
  double b = 0.0;
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t len = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  // Leaf with no gradient.
  Var constant(Tensor value);
  // Owned leaf that receives a gradient.
  Var variable(Tensor value);
  // Leaf referencing external storage that must outlive the graph.
  Var parameter(const Tensor& value);

  const Tensor& value(Var v) const;
  Op op(Var v) const { return nodes_[v.id()].op; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a size-1 output. The graph itself is left unchanged,
  // so backward can be called more than once.
  Gradients backward(Var output) const;

  // Appends a node. Used by the primitive functions below.
  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, OpAttr attr = {});

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    OpAttr attr;

    const Tensor& get() const { return external ? *external : value; }
  };

  void backward_node(std::size_t id, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

// Primitives. Binary elementwise ops broadcast their second operand when it is
// a scalar, a [1,n] row or an [m,1] column against an [m,n] first operand.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);   // [m,n] -> [1,n]
Var mean_rows(Var a);  // [m,n] -> [1,n]
Var sum_cols(Var a);   // [m,n] -> [m,1]
Var exp(Var a);
Var log(Var a);
Var gelu(Var a);
Var relu(Var a);
Var abs(Var a);
Var clamp(Var a, double lo, double hi);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps = kLayerNormEps);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len);
Var transpose(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Scalar gelu with the tanh approximation and its derivative.
double gelu_value(double x);
double gelu_derivative(double x);

// Central-difference gradient estimate of f at x, one coordinate at a time.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps);

// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace rica::ad

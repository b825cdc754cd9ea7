#include "rica/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "rica/error.hpp"

namespace rica::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_mat(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Graph& common_graph(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw ContractError("operands belong to different graphs");
  }
  return a.graph();
}

void require_rank2(const Tensor& t, std::string_view what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " needs a rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast classify(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (a.rank() == 2 && b.rank() == 2) {
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  }
  if (a.rank() == 2 && b.rank() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw DimensionError(std::string(what) + ": cannot combine " + shape_string(a.shape()) +
                       " with " + shape_string(b.shape()));
}

// Index into b for flat element i of a under the broadcast kind.
inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kCol: return i / cols;
  }
  return 0;
}

Tensor checked(Tensor t, Op op) {
  if (!t.all_finite()) {
    throw NumericalFault("non-finite value produced by " + std::string(op_name(op)));
  }
  return t;
}

template <typename F>
Var unary(Var a, Op op, F&& fn, OpAttr attr = {}) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  return a.graph().record(op, {a.id()}, checked(std::move(out), op), attr);
}

template <typename F>
Var binary(Var a, Var b, Op op, F&& fn) {
  Graph& g = common_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto kind = classify(x, y, op_name(op));
  Tensor out(x.shape());
  const auto cols = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i], y[b_index(kind, i, cols)]);
  return g.record(op, {a.id(), b.id()}, checked(std::move(out), op));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumRows: return "sum_rows";
    case Op::kMeanRows: return "mean_rows";
    case Op::kSumCols: return "sum_cols";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kGelu: return "gelu";
    case Op::kRelu: return "relu";
    case Op::kAbs: return "abs";
    case Op::kClamp: return "clamp";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNormRows: return "layer_norm_rows";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kTranspose: return "transpose";
  }
  return "?";
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

const Tensor& Var::value() const { return graph_->value(*this); }

const Tensor& Gradients::operator[](Var v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  auto [it, inserted] = zeros_.try_emplace(v.id());
  if (inserted) it->second = Tensor(v.shape());
  return it->second;
}

bool Gradients::has(Var v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalFault("non-finite constant");
  return record(Op::kLeaf, {}, std::move(value));
}

Var Graph::variable(Tensor value) {
  if (!value.all_finite()) throw NumericalFault("non-finite variable");
  Var v = record(Op::kLeaf, {}, std::move(value));
  nodes_.back().requires_grad = true;
  return v;
}

Var Graph::parameter(const Tensor& value) {
  Node node;
  node.op = Op::kLeaf;
  node.external = &value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const { return nodes_[v.id()].get(); }

Var Graph::record(Op op, std::vector<std::size_t> inputs, Tensor value, OpAttr attr) {
  Node node;
  node.op = op;
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [&](std::size_t i) { return nodes_[i].requires_grad; });
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  node.attr = attr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var output) const {
  if (&output.graph() != this) throw ContractError("output belongs to another graph");
  const Tensor& out = value(output);
  if (out.size() != 1) {
    throw ContractError("backward needs a scalar output, got " + shape_string(out.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[output.id()] = Tensor(out.shape(), 1.0);
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    if (grads[id].empty() || !nodes_[id].requires_grad) continue;
    if (nodes_[id].op != Op::kLeaf) {
      backward_node(id, grads);
      grads[id] = Tensor();
    }
  }
  Gradients result;
  result.grads_ = std::move(grads);
  return result;
}

void Graph::backward_node(std::size_t id, std::vector<Tensor>& grads) const {
  const Node& node = nodes_[id];
  const Tensor& dy = grads[id];
  const Tensor& y = node.get();

  auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
  auto slot = [&](std::size_t k) -> Tensor& {
    const auto in = node.inputs[k];
    if (grads[in].empty()) grads[in] = Tensor(nodes_[in].get().shape());
    return grads[in];
  };
  auto input = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].get(); };

  switch (node.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul: {
      const auto dY = as_mat(dy);
      if (wants(0)) {
        auto dA = as_mat(slot(0));
        dA.noalias() += dY * as_mat(input(1)).transpose();
      }
      if (wants(1)) {
        auto dB = as_mat(slot(1));
        dB.noalias() += as_mat(input(0)).transpose() * dY;
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const auto kind = classify(a, b, op_name(node.op));
      const auto cols = a.cols();
      if (wants(0)) {
        Tensor& da = slot(0);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          da[i] += node.op == Op::kMul ? dy[i] * b[b_index(kind, i, cols)] : dy[i];
        }
      }
      if (wants(1)) {
        Tensor& db = slot(1);
        const double sign = node.op == Op::kSub ? -1.0 : 1.0;
        for (std::size_t i = 0; i < dy.size(); ++i) {
          const double g = node.op == Op::kMul ? dy[i] * a[i] : sign * dy[i];
          db[b_index(kind, i, cols)] += g;
        }
      }
      break;
    }
    case Op::kScale: {
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += node.attr.a * dy[i];
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      Tensor& da = slot(0);
      const double g = node.op == Op::kMean ? dy[0] / static_cast<double>(da.size()) : dy[0];
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
      break;
    }
    case Op::kSumRows:
    case Op::kMeanRows: {
      Tensor& da = slot(0);
      const auto rows = da.rows();
      const auto cols = da.cols();
      const double f = node.op == Op::kMeanRows ? 1.0 / static_cast<double>(rows) : 1.0;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] += f * dy[c];
      }
      break;
    }
    case Op::kSumCols: {
      Tensor& da = slot(0);
      const auto rows = da.rows();
      const auto cols = da.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] += dy[r];
      }
      break;
    }
    case Op::kExp: {
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i];
      break;
    }
    case Op::kLog: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / x[i];
      break;
    }
    case Op::kGelu: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * gelu_derivative(x[i]);
      break;
    }
    case Op::kRelu: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] > 0.0) da[i] += dy[i];
      }
      break;
    }
    case Op::kAbs: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] > 0.0) da[i] += dy[i];
        else if (x[i] < 0.0) da[i] -= dy[i];
      }
      break;
    }
    case Op::kClamp: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (x[i] >= node.attr.a && x[i] <= node.attr.b) da[i] += dy[i];
      }
      break;
    }
    case Op::kSoftmaxRows: {
      Tensor& da = slot(0);
      const auto rows = y.rows();
      const auto cols = y.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const auto i = r * cols + c;
          da[i] += y[i] * (dy[i] - dot);
        }
      }
      break;
    }
    case Op::kLayerNormRows: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      const auto rows = x.rows();
      const auto cols = x.cols();
      const double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= n;
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + node.attr.a);
        double mean_dy = 0.0;
        double mean_dy_xhat = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double xhat = (xr[c] - mu) * rstd;
          mean_dy += dy[r * cols + c];
          mean_dy_xhat += dy[r * cols + c] * xhat;
        }
        mean_dy /= n;
        mean_dy_xhat /= n;
        for (std::size_t c = 0; c < cols; ++c) {
          const double xhat = (xr[c] - mu) * rstd;
          da[r * cols + c] += rstd * (dy[r * cols + c] - mean_dy - xhat * mean_dy_xhat);
        }
      }
      break;
    }
    case Op::kConcat: {
      const auto axis = node.attr.axis;
      const auto out_cols = y.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const Tensor& part = input(k);
        const auto pr = part.rows();
        const auto pc = part.cols();
        if (wants(k)) {
          Tensor& dp = slot(k);
          for (std::size_t r = 0; r < pr; ++r) {
            for (std::size_t c = 0; c < pc; ++c) {
              const auto src = axis == 0 ? (offset + r) * out_cols + c : r * out_cols + offset + c;
              dp[r * pc + c] += dy[src];
            }
          }
        }
        offset += axis == 0 ? pr : pc;
      }
      break;
    }
    case Op::kSlice: {
      const Tensor& x = input(0);
      Tensor& da = slot(0);
      const auto cols = x.cols();
      const auto oc = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        for (std::size_t c = 0; c < oc; ++c) {
          const auto src = node.attr.axis == 0 ? (node.attr.start + r) * cols + c
                                               : r * cols + node.attr.start + c;
          da[src] += dy[r * oc + c];
        }
      }
      break;
    }
    case Op::kTranspose: {
      auto dA = as_mat(slot(0));
      dA += as_mat(dy).transpose();
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank2(x, "matmul");
  require_rank2(y, "matmul");
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(x.shape()) +
                         " x " + shape_string(y.shape()));
  }
  Tensor out({x.rows(), y.cols()});
  as_mat(out).noalias() = as_mat(x) * as_mat(y);
  return g.record(Op::kMatmul, {a.id(), b.id()}, checked(std::move(out), Op::kMatmul));
}

Var add(Var a, Var b) {
  return binary(a, b, Op::kAdd, [](double x, double y) { return x + y; });
}

Var sub(Var a, Var b) {
  return binary(a, b, Op::kSub, [](double x, double y) { return x - y; });
}

Var mul(Var a, Var b) {
  return binary(a, b, Op::kMul, [](double x, double y) { return x * y; });
}

Var scale(Var a, double factor) {
  OpAttr attr;
  attr.a = factor;
  return unary(a, Op::kScale, [factor](double x) { return factor * x; }, attr);
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  return a.graph().record(Op::kSum, {a.id()}, checked(Tensor::scalar(s), Op::kSum));
}

Var mean(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  s /= static_cast<double>(x.size());
  return a.graph().record(Op::kMean, {a.id()}, checked(Tensor::scalar(s), Op::kMean));
}

namespace {

Var reduce_rows(Var a, bool average) {
  const Tensor& x = a.value();
  require_rank2(x, average ? "mean_rows" : "sum_rows");
  Tensor out({1, x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x.at(r, c);
  }
  if (average) {
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (double& v : out.data()) v *= inv;
  }
  const Op op = average ? Op::kMeanRows : Op::kSumRows;
  return a.graph().record(op, {a.id()}, checked(std::move(out), op));
}

}  // namespace

Var sum_rows(Var a) { return reduce_rows(a, false); }

Var mean_rows(Var a) { return reduce_rows(a, true); }

Var sum_cols(Var a) {
  const Tensor& x = a.value();
  require_rank2(x, "sum_cols");
  Tensor out({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out[r] += x.at(r, c);
  }
  return a.graph().record(Op::kSumCols, {a.id()}, checked(std::move(out), Op::kSumCols));
}

Var exp(Var a) {
  return unary(a, Op::kExp, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(a, Op::kLog, [](double x) { return std::log(x); });
}

Var gelu(Var a) { return unary(a, Op::kGelu, gelu_value); }

Var relu(Var a) {
  return unary(a, Op::kRelu, [](double x) { return x > 0.0 ? x : 0.0; });
}

Var abs(Var a) {
  return unary(a, Op::kAbs, [](double x) { return std::fabs(x); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp bounds out of order");
  OpAttr attr;
  attr.a = lo;
  attr.b = hi;
  return unary(a, Op::kClamp, [lo, hi](double x) { return std::clamp(x, lo, hi); }, attr);
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  require_rank2(x, "softmax_rows");
  Tensor out(x.shape());
  const auto cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.data().data() + r * cols;
    double* yr = &out[r * cols];
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  return a.graph().record(Op::kSoftmaxRows, {a.id()}, checked(std::move(out), Op::kSoftmaxRows));
}

Var layer_norm_rows(Var a, double eps) {
  const Tensor& x = a.value();
  require_rank2(x, "layer_norm_rows");
  if (!(eps > 0.0)) throw ContractError("layer_norm_rows eps must be positive");
  Tensor out(x.shape());
  const auto cols = x.cols();
  const double n = static_cast<double>(cols);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xr[c] - mu) * rstd;
  }
  OpAttr attr;
  attr.a = eps;
  return a.graph().record(Op::kLayerNormRows, {a.id()},
                          checked(std::move(out), Op::kLayerNormRows), attr);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat axis must be 0 or 1");
  Graph& g = parts.front().graph();
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw ContractError("concat operands belong to different graphs");
    const Tensor& t = p.value();
    require_rank2(t, "concat");
    if (axis == 0) {
      if (rows > 0 && t.cols() != cols) throw DimensionError("concat column mismatch");
      cols = t.cols();
      rows += t.rows();
    } else {
      if (cols > 0 && t.rows() != rows) throw DimensionError("concat row mismatch");
      rows = t.rows();
      cols += t.cols();
    }
    ids.push_back(p.id());
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (axis == 0) out.at(offset + r, c) = t.at(r, c);
        else out.at(r, offset + c) = t.at(r, c);
      }
    }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  OpAttr attr;
  attr.axis = axis;
  return g.record(Op::kConcat, std::move(ids), std::move(out), attr);
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor& x = a.value();
  require_rank2(x, "slice");
  if (axis > 1) throw DimensionError("slice axis must be 0 or 1");
  const auto extent = axis == 0 ? x.rows() : x.cols();
  if (len == 0 || start + len > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(len) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const auto rows = axis == 0 ? len : x.rows();
  const auto cols = axis == 0 ? x.cols() : len;
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = axis == 0 ? x.at(start + r, c) : x.at(r, start + c);
    }
  }
  OpAttr attr;
  attr.axis = axis;
  attr.start = start;
  attr.len = len;
  return a.graph().record(Op::kSlice, {a.id()}, std::move(out), attr);
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_rank2(x, "transpose");
  Tensor out({x.cols(), x.rows()});
  as_mat(out) = as_mat(x).transpose();
  return a.graph().record(Op::kTranspose, {a.id()}, std::move(out));
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error size mismatch");
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace rica::ad

#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Graph records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters live
// outside the graph; backward() accumulates into Parameter::grad so a
// mini-batch can sum gradients over several per-instance graphs.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qan/matrix.hpp"

namespace qan {

class Rng;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // same shape as value
};

// Owns parameters at stable addresses, in insertion order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Matrix init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  void scale_grad(double s);
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class OpKind {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kAddRow,
  kSub,
  kMul,
  kScale,
  kShift,
  kSigmoid,
  kTanh,
  kSoftmaxRows,
  kTranspose,
  kConcatCols,
  kConcatRows,
  kSelectRows,
  kStackRows,
  kGather,
  kMaxRows,
  kMeanRows,
  kRepeatRow,
  kMaskFill,
  kSum,
  kCrossEntropy,
};

class Graph;

// Lightweight handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix& value() const;
  Matrix grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Called with the node's output value and its accumulated gradient.
  using Pullback = std::function<void(Graph&, const Matrix& value, const Matrix& grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Repeated calls with the same Parameter return the same node.
  Var parameter(Parameter& p);

  Var push(OpKind op, std::vector<std::size_t> inputs, Matrix value, Pullback pullback);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  // Zero matrix when the node has not received any gradient.
  Matrix grad(std::size_t id) const;
  // Lazily allocated accumulation buffer used by pullbacks.
  Matrix& grad_buffer(std::size_t id);
  OpKind op(std::size_t id) const { return nodes_[id].op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Parameter
  // gradients are added to Parameter::grad.
  void backward(Var loss);

 private:
  struct Node {
    OpKind op;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    Pullback pullback;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const { return graph_->value(id_); }
inline Matrix Var::grad() const { return graph_->grad(id_); }

// Differentiable operators. All inputs must belong to the same graph.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1×c row over every row of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // element-wise
Var scale(Var a, double s);
Var shift(Var a, double s);  // a + s
Var sigmoid(Var a);
Var tanh(Var a);
// Row-wise softmax with max subtraction. Entries equal to -inf are treated
// as excluded cells and get probability 0; a row with no finite entry
// becomes all zeros.
Var softmax_rows(Var a);
Var transpose(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var select_rows(Var a, std::span<const std::size_t> rows);
// total×c matrix whose row positions[i] is rows[i] (each 1×c); other rows 0.
Var stack_rows(std::span<const Var> rows, std::span<const std::size_t> positions,
               std::size_t total);
// Rows of a parameter table; the gradient is scattered straight into
// table.grad so large embedding tables never get a dense per-graph buffer.
Var gather(Graph& g, Parameter& table, std::span<const std::int64_t> ids);
// Column-wise max / mean over the listed rows, 1×c.
Var max_rows(Var a, std::span<const std::size_t> rows);
Var mean_rows(Var a, std::span<const std::size_t> rows);
Var repeat_row(Var row, std::size_t times);
// Replaces cells where keep(i,j) == 0 by `fill`; those cells pass no gradient.
Var mask_fill(Var a, const Matrix& keep, double fill);
Var sum(Var a);
// -log(max(p[gold], 1e-12)) for a 1×k probability row.
Var cross_entropy(Var probs, std::size_t gold);

enum class Mode { kTrain, kEval };

// Inverted dropout; identity in eval mode or for rate 0. Throws ConfigError
// unless 0 <= rate < 1.
Var dropout(Var a, double rate, Mode mode, Rng& rng);

}  // namespace qan

#include "qan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qan/error.hpp"
#include "qan/random.hpp"

namespace qan {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw Error("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

void require_rows(const char* op, const Matrix& m, std::span<const std::size_t> rows) {
  if (rows.empty()) throw EmptyInputError(std::string(op) + ": no rows selected");
  for (auto r : rows) {
    if (r >= m.rows()) {
      throw DimensionError(std::string(op) + ": row " + std::to_string(r) +
                           " out of range for " + m.shape_string());
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Matrix init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Matrix grad(init.rows(), init.cols());
  auto p = std::make_unique<Parameter>(Parameter{name, std::move(init), std::move(grad)});
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw LookupError("unknown parameter: " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw LookupError("unknown parameter: " + std::string(name));
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

void ParameterSet::scale_grad(double s) {
  for (auto& p : params_)
    for (double& g : p->grad.values()) g *= s;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Matrix value) { return push(OpKind::kConstant, {}, std::move(value), nullptr); }

Var Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = push(OpKind::kParameter, {}, p.value, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Graph::push(OpKind op, std::vector<std::size_t> inputs, Matrix value, Pullback pullback) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), Matrix(), std::move(pullback)});
  return Var(this, nodes_.size() - 1);
}

Matrix Graph::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value) || n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw Error("loss belongs to a different graph");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward requires a scalar (1x1) loss, got " + lv.shape_string());
  }
  for (auto& n : nodes_) n.grad = Matrix();
  grad_buffer(loss.id())(0, 0) = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.param != nullptr) {
      add_in_place(n.param->grad, n.grad);
    } else if (n.pullback) {
      n.pullback(*this, n.value, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Operators

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Matrix out = matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return g.push(OpKind::kMatMul, {ia, ib}, std::move(out),
                [ia, ib](Graph& g, const Matrix&, const Matrix& dy) {
                  add_in_place(g.grad_buffer(ia), matmul_nt(dy, g.value(ib)));
                  add_in_place(g.grad_buffer(ib), matmul_tn(g.value(ia), dy));
                });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value();
  add_in_place(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return g.push(OpKind::kAdd, {ia, ib}, std::move(out),
                [ia, ib](Graph& g, const Matrix&, const Matrix& dy) {
                  add_in_place(g.grad_buffer(ia), dy);
                  add_in_place(g.grad_buffer(ib), dy);
                });
}

Var add_row(Var a, Var row) {
  Graph& g = same_graph(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row shape mismatch: " + av.shape_string() + " + " +
                         rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  const auto ia = a.id(), ir = row.id();
  return g.push(OpKind::kAddRow, {ia, ir}, std::move(out),
                [ia, ir](Graph& g, const Matrix&, const Matrix& dy) {
                  add_in_place(g.grad_buffer(ia), dy);
                  Matrix& dr = g.grad_buffer(ir);
                  for (std::size_t i = 0; i < dy.rows(); ++i)
                    for (std::size_t j = 0; j < dy.cols(); ++j) dr[j] += dy(i, j);
                });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value();
  add_in_place(out, b.value(), -1.0);
  const auto ia = a.id(), ib = b.id();
  return g.push(OpKind::kSub, {ia, ib}, std::move(out),
                [ia, ib](Graph& g, const Matrix&, const Matrix& dy) {
                  add_in_place(g.grad_buffer(ia), dy);
                  add_in_place(g.grad_buffer(ib), dy, -1.0);
                });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return g.push(OpKind::kMul, {ia, ib}, std::move(out),
                [ia, ib](Graph& g, const Matrix&, const Matrix& dy) {
                  const Matrix& av = g.value(ia);
                  const Matrix& bv = g.value(ib);
                  Matrix& da = g.grad_buffer(ia);
                  for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
                  Matrix& db = g.grad_buffer(ib);
                  for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
                });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  const auto ia = a.id();
  return a.graph().push(OpKind::kScale, {ia}, std::move(out),
                        [ia, s](Graph& g, const Matrix&, const Matrix& dy) {
                          add_in_place(g.grad_buffer(ia), dy, s);
                        });
}

Var shift(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v += s;
  const auto ia = a.id();
  return a.graph().push(OpKind::kShift, {ia}, std::move(out),
                        [ia](Graph& g, const Matrix&, const Matrix& dy) {
                          add_in_place(g.grad_buffer(ia), dy);
                        });
}

Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const auto ia = a.id();
  return a.graph().push(OpKind::kSigmoid, {ia}, std::move(out),
                        [ia](Graph& g, const Matrix& y, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            da[i] += dy[i] * y[i] * (1.0 - y[i]);
                        });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  const auto ia = a.id();
  return a.graph().push(OpKind::kTanh, {ia}, std::move(out),
                        [ia](Graph& g, const Matrix& y, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            da[i] += dy[i] * (1.0 - y[i] * y[i]);
                        });
}

Var softmax_rows(Var a) {
  const Matrix& in = a.value();
  Matrix out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const auto x = in.row(i);
    auto y = out.row(i);
    double mx = kNegInf;
    for (double v : x) mx = std::max(mx, v);
    if (mx == kNegInf) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      y[j] = x[j] == kNegInf ? 0.0 : std::exp(x[j] - mx);
      s += y[j];
    }
    for (double& v : y) v /= s;
  }
  const auto ia = a.id();
  return a.graph().push(OpKind::kSoftmaxRows, {ia}, std::move(out),
                        [ia](Graph& g, const Matrix& y, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            const auto yr = y.row(i);
                            const auto gr = dy.row(i);
                            double dot = 0.0;
                            for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
                            auto dr = da.row(i);
                            for (std::size_t j = 0; j < yr.size(); ++j)
                              dr[j] += yr[j] * (gr[j] - dot);
                          }
                        });
}

Var transpose(Var a) {
  const auto ia = a.id();
  return a.graph().push(OpKind::kTranspose, {ia}, transpose(a.value()),
                        [ia](Graph& g, const Matrix&, const Matrix& dy) {
                          add_in_place(g.grad_buffer(ia), transpose(dy));
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  Graph& g = parts.front().graph();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw Error("operands belong to different graphs");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols row mismatch: " + std::to_string(rows) + " vs " +
                           p.value().shape_string());
    }
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + off);
    off += v.cols();
  }
  return g.push(OpKind::kConcatCols, ids, std::move(out),
                [ids](Graph& g, const Matrix&, const Matrix& dy) {
                  std::size_t off = 0;
                  for (auto id : ids) {
                    Matrix& d = g.grad_buffer(id);
                    for (std::size_t i = 0; i < d.rows(); ++i)
                      for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += dy(i, off + j);
                    off += d.cols();
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no inputs");
  Graph& g = parts.front().graph();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw Error("operands belong to different graphs");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows column mismatch: " + std::to_string(cols) + " vs " +
                           p.value().shape_string());
    }
    rows += p.rows();
    ids.push_back(p.id());
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  return g.push(OpKind::kConcatRows, ids, Matrix(rows, cols, std::move(data)),
                [ids](Graph& g, const Matrix&, const Matrix& dy) {
                  std::size_t off = 0;
                  for (auto id : ids) {
                    Matrix& d = g.grad_buffer(id);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[off + i];
                    off += d.size();
                  }
                });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& in = a.value();
  require_rows("select_rows", in, rows);
  Matrix out(rows.size(), in.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(in.row(rows[i]).begin(), in.row(rows[i]).end(), out.row(i).begin());
  const auto ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.graph().push(OpKind::kSelectRows, {ia}, std::move(out),
                        [ia, idx](Graph& g, const Matrix&, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            auto dr = da.row(idx[i]);
                            const auto gr = dy.row(i);
                            for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
                          }
                        });
}

Var stack_rows(std::span<const Var> rows, std::span<const std::size_t> positions,
               std::size_t total) {
  if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
  if (rows.size() != positions.size()) throw DimensionError("stack_rows: position count mismatch");
  Graph& g = rows.front().graph();
  const std::size_t cols = rows.front().cols();
  Matrix out(total, cols);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& v = rows[i].value();
    if (v.rows() != 1 || v.cols() != cols) {
      throw DimensionError("stack_rows expects 1x" + std::to_string(cols) + " rows, got " +
                           v.shape_string());
    }
    if (positions[i] >= total) throw DimensionError("stack_rows: position out of range");
    std::copy(v.row(0).begin(), v.row(0).end(), out.row(positions[i]).begin());
    ids.push_back(rows[i].id());
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return g.push(OpKind::kStackRows, ids, std::move(out),
                [ids, pos](Graph& g, const Matrix&, const Matrix& dy) {
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    Matrix& d = g.grad_buffer(ids[i]);
                    const auto gr = dy.row(pos[i]);
                    for (std::size_t j = 0; j < gr.size(); ++j) d[j] += gr[j];
                  }
                });
}

Var gather(Graph& g, Parameter& table, std::span<const std::int64_t> ids) {
  const Matrix& t = table.value;
  Matrix out(ids.size(), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
      throw LookupError("token id " + std::to_string(ids[i]) + " outside table '" + table.name +
                        "' with " + std::to_string(t.rows()) + " rows");
    }
    std::copy(t.row(ids[i]).begin(), t.row(ids[i]).end(), out.row(i).begin());
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  Parameter* tp = &table;
  return g.push(OpKind::kGather, {}, std::move(out),
                [tp, idx](Graph&, const Matrix&, const Matrix& dy) {
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    auto dr = tp->grad.row(idx[i]);
                    const auto gr = dy.row(i);
                    for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
                  }
                });
}

Var max_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& in = a.value();
  require_rows("max_rows", in, rows);
  Matrix out(1, in.cols(), kNegInf);
  std::vector<std::size_t> argmax(in.cols(), rows.front());
  for (auto r : rows) {
    for (std::size_t j = 0; j < in.cols(); ++j) {
      if (in(r, j) > out[j]) {
        out[j] = in(r, j);
        argmax[j] = r;
      }
    }
  }
  const auto ia = a.id();
  return a.graph().push(OpKind::kMaxRows, {ia}, std::move(out),
                        [ia, argmax](Graph& g, const Matrix&, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t j = 0; j < argmax.size(); ++j)
                            da(argmax[j], j) += dy[j];
                        });
}

Var mean_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& in = a.value();
  require_rows("mean_rows", in, rows);
  Matrix out(1, in.cols());
  for (auto r : rows)
    for (std::size_t j = 0; j < in.cols(); ++j) out[j] += in(r, j);
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out.values()) v *= inv;
  const auto ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.graph().push(OpKind::kMeanRows, {ia}, std::move(out),
                        [ia, idx, inv](Graph& g, const Matrix&, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (auto r : idx)
                            for (std::size_t j = 0; j < dy.cols(); ++j) da(r, j) += dy[j] * inv;
                        });
}

Var repeat_row(Var row, std::size_t times) {
  const Matrix& v = row.value();
  if (v.rows() != 1) throw DimensionError("repeat_row expects a 1xc row, got " + v.shape_string());
  Matrix out(times, v.cols());
  for (std::size_t i = 0; i < times; ++i) std::copy(v.row(0).begin(), v.row(0).end(), out.row(i).begin());
  const auto ir = row.id();
  return row.graph().push(OpKind::kRepeatRow, {ir}, std::move(out),
                          [ir](Graph& g, const Matrix&, const Matrix& dy) {
                            Matrix& d = g.grad_buffer(ir);
                            for (std::size_t i = 0; i < dy.rows(); ++i)
                              for (std::size_t j = 0; j < dy.cols(); ++j) d[j] += dy(i, j);
                          });
}

Var mask_fill(Var a, const Matrix& keep, double fill) {
  require_same_shape("mask_fill", a.value(), keep);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (keep[i] == 0.0) out[i] = fill;
  const auto ia = a.id();
  return a.graph().push(OpKind::kMaskFill, {ia}, std::move(out),
                        [ia, keep](Graph& g, const Matrix&, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            if (keep[i] != 0.0) da[i] += dy[i];
                        });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.graph().push(OpKind::kSum, {ia}, Matrix(1, 1, s),
                        [ia](Graph& g, const Matrix&, const Matrix& dy) {
                          Matrix& da = g.grad_buffer(ia);
                          for (double& v : da.values()) v += dy[0];
                        });
}

Var cross_entropy(Var probs, std::size_t gold) {
  constexpr double kFloor = 1e-12;
  const Matrix& p = probs.value();
  if (p.rows() != 1 || gold >= p.cols()) {
    throw DimensionError("cross_entropy expects a 1xk row with gold < k, got " +
                         p.shape_string() + " gold " + std::to_string(gold));
  }
  const double pg = p[gold];
  const bool clamped = !(pg >= kFloor);
  const double loss = -std::log(clamped ? kFloor : pg);
  const auto ip = probs.id();
  return probs.graph().push(OpKind::kCrossEntropy, {ip}, Matrix(1, 1, loss),
                            [ip, gold, pg, clamped](Graph& g, const Matrix&, const Matrix& dy) {
                              if (clamped) return;
                              g.grad_buffer(ip)[gold] += -dy[0] / pg;
                            });
}

Var dropout(Var a, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(a, a.graph().constant(std::move(mask)));
}

}  // namespace qan

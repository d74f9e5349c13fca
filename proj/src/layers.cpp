#include "qan/layers.hpp"

#include <cmath>

#include "qan/error.hpp"
#include "qan/random.hpp"

namespace qan {

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

GruParams GruParams::create(ParameterSet& params, const std::string& prefix,
                            std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  GruParams w;
  w.w_z = &params.add(prefix + ".W_z", xavier_uniform(input_dim, hidden_dim, rng));
  w.w_r = &params.add(prefix + ".W_r", xavier_uniform(input_dim, hidden_dim, rng));
  w.w_h = &params.add(prefix + ".W_h", xavier_uniform(input_dim, hidden_dim, rng));
  w.u_z = &params.add(prefix + ".U_z", xavier_uniform(hidden_dim, hidden_dim, rng));
  w.u_r = &params.add(prefix + ".U_r", xavier_uniform(hidden_dim, hidden_dim, rng));
  w.u_h = &params.add(prefix + ".U_h", xavier_uniform(hidden_dim, hidden_dim, rng));
  w.b_z = &params.add(prefix + ".b_z", Matrix(1, hidden_dim));
  w.b_r = &params.add(prefix + ".b_r", Matrix(1, hidden_dim));
  w.b_h = &params.add(prefix + ".b_h", Matrix(1, hidden_dim));
  return w;
}

GruParams GruParams::bind(ParameterSet& params, const std::string& prefix) {
  GruParams w;
  w.w_z = &params.at(prefix + ".W_z");
  w.w_r = &params.at(prefix + ".W_r");
  w.w_h = &params.at(prefix + ".W_h");
  w.u_z = &params.at(prefix + ".U_z");
  w.u_r = &params.at(prefix + ".U_r");
  w.u_h = &params.at(prefix + ".U_h");
  w.b_z = &params.at(prefix + ".b_z");
  w.b_r = &params.at(prefix + ".b_r");
  w.b_h = &params.at(prefix + ".b_h");
  return w;
}

BiGruParams BiGruParams::create(ParameterSet& params, const std::string& prefix,
                                std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  BiGruParams w;
  w.forward = GruParams::create(params, prefix + ".fwd", input_dim, hidden_dim, rng);
  w.backward = GruParams::create(params, prefix + ".bwd", input_dim, hidden_dim, rng);
  return w;
}

BiGruParams BiGruParams::bind(ParameterSet& params, const std::string& prefix) {
  return {GruParams::bind(params, prefix + ".fwd"), GruParams::bind(params, prefix + ".bwd")};
}

namespace {

void check_gru_shapes(const GruParams& w, std::size_t in, std::size_t h_cols, std::size_t x_rows) {
  if (w.w_z == nullptr) throw ConfigError("GRU parameters not initialised");
  if (x_rows != 1 || in != w.input_dim() || h_cols != w.hidden_dim()) {
    throw DimensionError("gru_cell shape mismatch: x 1x" + std::to_string(in) + " h 1x" +
                         std::to_string(h_cols) + " for weights in=" +
                         std::to_string(w.input_dim()) + " hidden=" +
                         std::to_string(w.hidden_dim()));
  }
}

// Input projections for a whole sequence share one matmul per gate; the
// recurrent part then runs per step on the precomputed rows.
struct GateInputs {
  Var z, r, h;
};

GateInputs project_inputs(Var x, const GruParams& w) {
  Graph& g = x.graph();
  return {add_row(matmul(x, g.parameter(*w.w_z)), g.parameter(*w.b_z)),
          add_row(matmul(x, g.parameter(*w.w_r)), g.parameter(*w.b_r)),
          add_row(matmul(x, g.parameter(*w.w_h)), g.parameter(*w.b_h))};
}

Var recurrent_step(Var xz, Var xr, Var xh, Var h_prev, const GruParams& w) {
  Graph& g = h_prev.graph();
  Var z = sigmoid(add(xz, matmul(h_prev, g.parameter(*w.u_z))));
  Var r = sigmoid(add(xr, matmul(h_prev, g.parameter(*w.u_r))));
  Var cand = tanh(add(xh, matmul(mul(r, h_prev), g.parameter(*w.u_h))));
  // (1 − z)⊙h + z⊙ĥ  ==  h + z⊙(ĥ − h)
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

}  // namespace

Var gru_cell(Var x, Var h_prev, const GruParams& w) {
  check_gru_shapes(w, x.cols(), h_prev.cols(), x.rows());
  if (h_prev.rows() != 1) throw DimensionError("gru_cell expects a 1xhidden state");
  GateInputs in = project_inputs(x, w);
  return recurrent_step(in.z, in.r, in.h, h_prev, w);
}

std::vector<std::size_t> valid_rows(std::span<const unsigned char> mask, std::size_t length) {
  std::vector<std::size_t> rows;
  if (mask.empty()) {
    rows.resize(length);
    for (std::size_t i = 0; i < length; ++i) rows[i] = i;
    return rows;
  }
  if (mask.size() != length) {
    throw DimensionError("mask length " + std::to_string(mask.size()) +
                         " does not match sequence length " + std::to_string(length));
  }
  for (std::size_t i = 0; i < length; ++i)
    if (mask[i]) rows.push_back(i);
  return rows;
}

Var bigru(Var seq, std::span<const unsigned char> mask, const BiGruParams& w) {
  const std::size_t length = seq.rows();
  if (length == 0) throw EmptyInputError("bigru: empty sequence");
  const auto rows = valid_rows(mask, length);
  if (rows.empty()) throw EmptyInputError("bigru: every position is masked");
  if (seq.cols() != w.forward.input_dim() || seq.cols() != w.backward.input_dim()) {
    throw DimensionError("bigru input width " + std::to_string(seq.cols()) +
                         " does not match GRU input dim " +
                         std::to_string(w.forward.input_dim()));
  }

  Graph& g = seq.graph();
  Var x = rows.size() == length ? seq : select_rows(seq, rows);
  const std::size_t n = rows.size();

  auto run = [&](const GruParams& p, bool reverse) {
    GateInputs in = project_inputs(x, p);
    std::vector<Var> states(n);
    Var h = g.constant(Matrix(1, p.hidden_dim()));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = reverse ? n - 1 - k : k;
      const std::size_t idx[] = {t};
      h = recurrent_step(select_rows(in.z, idx), select_rows(in.r, idx), select_rows(in.h, idx),
                         h, p);
      states[t] = h;
    }
    return states;
  };

  const auto fwd = run(w.forward, false);
  const auto bwd = run(w.backward, true);
  std::vector<Var> out_rows(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Var parts[] = {fwd[k], bwd[k]};
    out_rows[k] = concat_cols(parts);
  }
  return stack_rows(out_rows, rows, length);
}

Var pool_max_mean(Var m, std::span<const unsigned char> mask) {
  const auto rows = valid_rows(mask, m.rows());
  if (rows.empty()) throw EmptyInputError("pool_max_mean: every row is masked");
  const Var parts[] = {max_rows(m, rows), mean_rows(m, rows)};
  return concat_cols(parts);
}

}  // namespace qan

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qan/autodiff.hpp"

namespace qan {

class Rng;

// Xavier/Glorot uniform initialisation.
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// GRU weights in row-vector convention (x is 1×in, h is 1×hidden):
//   z  = σ(x·Wz + h·Uz + bz)
//   r  = σ(x·Wr + h·Ur + br)
//   ĥ  = tanh(x·Wh + (r⊙h)·Uh + bh)
//   h' = (1−z)⊙h + z⊙ĥ
// The reset gate multiplies h before the candidate matmul.
struct GruParams {
  Parameter* w_z = nullptr;
  Parameter* w_r = nullptr;
  Parameter* w_h = nullptr;
  Parameter* u_z = nullptr;
  Parameter* u_r = nullptr;
  Parameter* u_h = nullptr;
  Parameter* b_z = nullptr;
  Parameter* b_r = nullptr;
  Parameter* b_h = nullptr;

  std::size_t input_dim() const { return w_z->value.rows(); }
  std::size_t hidden_dim() const { return u_z->value.rows(); }

  // Registers "<prefix>.W_z" ... "<prefix>.b_h" in `params`.
  static GruParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                          std::size_t hidden_dim, Rng& rng);
  // Looks up parameters previously registered under `prefix`.
  static GruParams bind(ParameterSet& params, const std::string& prefix);
};

struct BiGruParams {
  GruParams forward;
  GruParams backward;

  static BiGruParams create(ParameterSet& params, const std::string& prefix,
                            std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  static BiGruParams bind(ParameterSet& params, const std::string& prefix);
};

// One GRU step. x is 1×in, h_prev is 1×hidden.
Var gru_cell(Var x, Var h_prev, const GruParams& w);

// Bidirectional GRU over the rows of `seq` (L×in). Positions whose mask
// entry is 0 neither update the state nor produce output (their output row
// is zero). Row t of the result is [forward state at t, backward state at t].
// An empty mask means every row is valid.
Var bigru(Var seq, std::span<const unsigned char> mask, const BiGruParams& w);

// [column-wise max, column-wise mean] over unmasked rows, 1×2c.
Var pool_max_mean(Var m, std::span<const unsigned char> mask);

// Indices of rows whose mask entry is nonzero (all rows for an empty mask).
std::vector<std::size_t> valid_rows(std::span<const unsigned char> mask, std::size_t length);

}  // namespace qan

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "support.hpp"

#include "qan/adam.hpp"
#include "qan/autodiff.hpp"
#include "qan/error.hpp"
#include "qan/layers.hpp"
#include "qan/matrix.hpp"
#include "qan/random.hpp"

using namespace qan;
using qan::test::max_gradient_error;
using qan::test::random_matrix;

namespace {

GruParams constant_gru(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hid,
                       double w) {
  Rng rng(0);
  auto gp = GruParams::create(ps, prefix, in, hid, rng);
  for (Parameter* p : {gp.w_z, gp.w_r, gp.w_h, gp.u_z, gp.u_r, gp.u_h, gp.b_z, gp.b_r, gp.b_h})
    p->value.fill(w);
  return gp;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("diffcore") {

TEST_CASE("matmul hand cases") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
  CHECK(matmul(a, b) == Matrix::from_rows({{19, 22}, {43, 50}}));
  CHECK(matmul(Matrix::identity(2), b) == b);
  CHECK(matmul(a, Matrix(2, 3)) == Matrix(2, 3));

  Rng rng(4);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix y = random_matrix(5, 4, rng);
  CHECK(max_abs_diff(matmul_nt(x, y), matmul(x, transpose(y))) < 1e-15);
  CHECK(max_abs_diff(matmul_tn(y, y), matmul(transpose(y), y)) < 1e-15);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
  Graph g;
  CHECK_THROWS_AS(matmul(g.constant(Matrix(1, 2)), g.constant(Matrix(3, 1))), DimensionError);
}

TEST_CASE("softmax_rows closed forms") {
  const Matrix s = softmax_rows(Matrix::from_rows({{2, 2, 2}, {0, std::log(3.0), 0}}));
  for (int j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const Matrix t = softmax_rows(Matrix::from_rows({{0, std::log(3.0)}}));
  CHECK(t(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax_rows excludes -inf cells") {
  const double ninf = -std::numeric_limits<double>::infinity();
  Graph g;
  Var v = softmax_rows(g.constant(Matrix::from_rows({{0, ninf, 0}, {ninf, ninf, ninf}})));
  CHECK(v.value()(0, 0) == doctest::Approx(0.5));
  CHECK(v.value()(0, 1) == 0.0);
  CHECK(v.value()(1, 2) == 0.0);
}

TEST_CASE("softmax rows sum to one on random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(6);
    const Matrix s = softmax_rows(random_matrix(r, c, rng, -50, 50));
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0;
      for (double x : s.row(i)) {
        CHECK(x >= 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("gru_cell with zero weights halves the state") {
  ParameterSet ps;
  auto w = constant_gru(ps, "g", 2, 3, 0.0);
  Graph g;
  const Matrix h = Matrix::from_rows({{0.4, -1.0, 2.0}});
  Var out = gru_cell(g.constant(Matrix::from_rows({{1.0, -3.0}})), g.constant(h), w);
  CHECK(max_abs_diff(out.value(), Matrix::from_rows({{0.2, -0.5, 1.0}})) < 1e-15);
  Var zero = gru_cell(g.constant(Matrix::from_rows({{1.0, -3.0}})), g.constant(Matrix(1, 3)), w);
  CHECK(zero.value() == Matrix(1, 3));
}

TEST_CASE("gru_cell scalar hand evaluation") {
  ParameterSet ps;
  auto w = constant_gru(ps, "g", 1, 1, 0.1);
  Graph g;
  Var out = gru_cell(g.constant(Matrix::from_rows({{1.0}})), g.constant(Matrix(1, 1)), w);
  // z = σ(0.2), ĥ = tanh(0.2), h' = z·ĥ
  CHECK(out.value()[0] == doctest::Approx(0.10852366129008935).epsilon(1e-12));
}

TEST_CASE("gru_cell reset gate acts before the candidate matmul") {
  ParameterSet ps;
  auto w = constant_gru(ps, "g", 1, 1, 0.1);
  Graph g;
  const double x = 0.7, h = -0.9;
  Var out = gru_cell(g.constant(Matrix::from_rows({{x}})), g.constant(Matrix::from_rows({{h}})), w);
  const double z = sigmoid(0.1 * x + 0.1 * h + 0.1);
  const double r = sigmoid(0.1 * x + 0.1 * h + 0.1);
  const double cand = std::tanh(0.1 * x + (r * h) * 0.1 + 0.1);
  CHECK(out.value()[0] == doctest::Approx((1 - z) * h + z * cand).epsilon(1e-12));
}

TEST_CASE("bigru single step equals two cells from zero state") {
  ParameterSet ps;
  Rng rng(3);
  auto bi = BiGruParams::create(ps, "bi", 2, 3, rng);
  Graph g;
  const Matrix x = Matrix::from_rows({{0.3, -0.8}});
  Var out = bigru(g.constant(x), {}, bi);
  Var f = gru_cell(g.constant(x), g.constant(Matrix(1, 3)), bi.forward);
  Var b = gru_cell(g.constant(x), g.constant(Matrix(1, 3)), bi.backward);
  REQUIRE(out.cols() == 6);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(out.value()(0, j) == f.value()[j]);
    CHECK(out.value()(0, 3 + j) == b.value()[j]);
  }
}

TEST_CASE("bigru unrolls step by step for length two") {
  ParameterSet ps;
  Rng rng(5);
  auto bi = BiGruParams::create(ps, "bi", 2, 2, rng);
  Graph g;
  const Matrix x = Matrix::from_rows({{0.3, -0.8}, {1.1, 0.2}});
  Var out = bigru(g.constant(x), {}, bi);
  Var x0 = g.constant(Matrix::from_rows({{0.3, -0.8}}));
  Var x1 = g.constant(Matrix::from_rows({{1.1, 0.2}}));
  Var zero = g.constant(Matrix(1, 2));
  Var f0 = gru_cell(x0, zero, bi.forward);
  Var f1 = gru_cell(x1, f0, bi.forward);
  Var b1 = gru_cell(x1, zero, bi.backward);
  Var b0 = gru_cell(x0, b1, bi.backward);
  const Matrix expect = Matrix::from_rows({{f0.value()[0], f0.value()[1], b0.value()[0], b0.value()[1]},
                                           {f1.value()[0], f1.value()[1], b1.value()[0], b1.value()[1]}});
  CHECK(max_abs_diff(out.value(), expect) < 1e-15);
}

TEST_CASE("bigru reversal symmetry on a palindrome") {
  ParameterSet ps;
  Rng rng(8);
  auto bi = BiGruParams::create(ps, "bi", 2, 3, rng);
  for (auto [f, b] : {std::pair{bi.forward.w_z, bi.backward.w_z}, std::pair{bi.forward.w_r, bi.backward.w_r},
                      std::pair{bi.forward.w_h, bi.backward.w_h}, std::pair{bi.forward.u_z, bi.backward.u_z},
                      std::pair{bi.forward.u_r, bi.backward.u_r}, std::pair{bi.forward.u_h, bi.backward.u_h},
                      std::pair{bi.forward.b_z, bi.backward.b_z}, std::pair{bi.forward.b_r, bi.backward.b_r},
                      std::pair{bi.forward.b_h, bi.backward.b_h}})
    b->value = f->value;
  Graph g;
  const Matrix x = Matrix::from_rows({{1, 2}, {-1, 0.5}, {0.3, 0.3}, {-1, 0.5}, {1, 2}});
  const Matrix out = bigru(g.constant(x), {}, bi).value();
  const std::size_t L = 5;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t j = 0; j < 3; ++j) CHECK(out(t, j) == doctest::Approx(out(L - 1 - t, 3 + j)).epsilon(1e-14));
}

TEST_CASE("bigru skips masked positions") {
  ParameterSet ps;
  Rng rng(9);
  auto bi = BiGruParams::create(ps, "bi", 2, 2, rng);
  Graph g;
  const Matrix packed = Matrix::from_rows({{0.5, 1.0}, {-0.2, 0.4}});
  const Matrix spread = Matrix::from_rows({{0.5, 1.0}, {9, 9}, {-0.2, 0.4}, {7, -7}});
  const std::vector<unsigned char> mask = {1, 0, 1, 0};
  const Matrix a = bigru(g.constant(packed), {}, bi).value();
  const Matrix b = bigru(g.constant(spread), mask, bi).value();
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(b(0, j) == a(0, j));
    CHECK(b(2, j) == a(1, j));
    CHECK(b(1, j) == 0.0);
    CHECK(b(3, j) == 0.0);
  }
  CHECK_THROWS_AS(bigru(g.constant(Matrix(0, 2)), {}, bi), EmptyInputError);
  const std::vector<unsigned char> none = {0, 0, 0, 0};
  CHECK_THROWS_AS(bigru(g.constant(spread), none, bi), EmptyInputError);
}

TEST_CASE("pool_max_mean hand cases") {
  Graph g;
  CHECK(pool_max_mean(g.constant(Matrix::from_rows({{1, 5}, {3, 3}})), {}).value() ==
        Matrix::from_rows({{3, 5, 2, 4}}));
  CHECK(pool_max_mean(g.constant(Matrix::from_rows({{-1, 2}})), {}).value() ==
        Matrix::from_rows({{-1, 2, -1, 2}}));
  CHECK(pool_max_mean(g.constant(Matrix(3, 2, 0.25)), {}).value() == Matrix(1, 4, 0.25));
  const std::vector<unsigned char> mask = {1, 0};
  CHECK(pool_max_mean(g.constant(Matrix::from_rows({{1, 5}, {30, 30}})), mask).value() ==
        Matrix::from_rows({{1, 5, 1, 5}}));
  const std::vector<unsigned char> none = {0, 0};
  CHECK_THROWS_AS(pool_max_mean(g.constant(Matrix(2, 2)), none), EmptyInputError);
}

TEST_CASE("dropout modes and expectation") {
  Graph g;
  Rng rng(17);
  Var x = g.constant(Matrix(1, 100000, 1.0));
  CHECK(dropout(x, 0.3, Mode::kEval, rng).value() == x.value());
  CHECK(dropout(x, 0.0, Mode::kTrain, rng).value() == x.value());
  const Matrix d = dropout(x, 0.3, Mode::kTrain, rng).value();
  const double mean = std::accumulate(d.values().begin(), d.values().end(), 0.0) / d.size();
  CHECK(std::abs(mean - 1.0) < 0.01);
  for (double v : d.values()) CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-12));
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::kEval, rng), ConfigError);
}

TEST_CASE("backward analytic cases") {
  ParameterSet ps;
  auto& w = ps.add("w", Matrix::from_rows({{1.5, -2.0, 0.25}}));
  auto& unused = ps.add("unused", Matrix::from_rows({{3.0}}));
  Graph g;
  Var wv = g.parameter(w);
  g.parameter(unused);
  g.backward(sum(mul(wv, wv)));
  CHECK(w.grad == Matrix::from_rows({{3.0, -4.0, 0.5}}));
  CHECK(unused.grad == Matrix(1, 1));

  Graph g2;
  CHECK_THROWS_AS(g2.backward(g2.parameter(w)), DimensionError);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(21);
  ParameterSet ps;
  auto& a = ps.add("a", random_matrix(3, 4, rng));
  auto& b = ps.add("b", random_matrix(4, 2, rng));
  auto& row = ps.add("row", random_matrix(1, 2, rng));
  auto& c = ps.add("c", random_matrix(3, 2, rng));
  auto& table = ps.add("table", random_matrix(5, 2, rng));
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix keep(3, 2, 1.0);
  keep(1, 0) = 0.0;
  const std::vector<std::int64_t> ids = {4, 0, 4};
  const std::vector<std::size_t> pick = {0, 2};

  auto loss_fn = [&](Graph& g) {
    Var av = g.parameter(a), bv = g.parameter(b), rv = g.parameter(row), cv = g.parameter(c);
    Var m = add_row(matmul(av, bv), rv);                       // 3×2
    Var s = softmax_rows(mask_fill(add(m, cv), keep, ninf));   // 3×2
    Var t = tanh(mul(sub(m, cv), sigmoid(scale(s, 2.0))));
    Var e = gather(g, table, ids);                             // 3×2
    const Var cols[] = {t, shift(e, 0.5)};
    Var cat = concat_cols(cols);                               // 3×4
    const Var rws[] = {cat, transpose(transpose(cat))};
    Var tall = concat_rows(rws);                               // 6×4
    Var sel = select_rows(tall, pick);
    const Var parts[] = {max_rows(sel, std::vector<std::size_t>{0, 1}), mean_rows(tall, pick)};
    const std::size_t pos[] = {2, 0};
    Var stacked = stack_rows(parts, pos, 3);                   // 3×4
    Var rep = repeat_row(mean_rows(stacked, pick), 2);
    Var probs = softmax_rows(select_rows(rep, std::vector<std::size_t>{1}));
    return add(sum(mul(stacked, stacked)), cross_entropy(probs, 2));
  };
  CHECK(max_gradient_error(ps, loss_fn) <= 1e-4);
}

TEST_CASE("gru and pooling pass a finite-difference check") {
  Rng rng(23);
  ParameterSet ps;
  auto bi = BiGruParams::create(ps, "bi", 3, 2, rng);
  auto& x = ps.add("x", random_matrix(4, 3, rng));
  const std::vector<unsigned char> mask = {1, 1, 0, 1};
  auto loss_fn = [&](Graph& g) {
    Var h = bigru(g.parameter(x), mask, bi);
    Var pooled = pool_max_mean(h, mask);
    return sum(mul(pooled, pooled));
  };
  CHECK(max_gradient_error(ps, loss_fn) <= 1e-4);
}

TEST_CASE("adam hand cases") {
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  {
    ParameterSet ps;
    auto& p = ps.add("p", Matrix::from_rows({{0.5, -0.25}}));
    Adam adam(cfg);
    adam.step(ps);
    CHECK(p.value == Matrix::from_rows({{0.5, -0.25}}));
    CHECK(adam.steps() == 1);
  }
  {
    ParameterSet ps;
    auto& p = ps.add("p", Matrix::from_rows({{0.5}}));
    p.grad = Matrix::from_rows({{1.0}});
    Adam adam(cfg);
    adam.step(ps);
    // m̂ = 1, v̂ = 1, Δw = -lr·1/(1+ε)
    CHECK(p.value[0] - 0.5 == doctest::Approx(-0.0009999999900000003).epsilon(1e-9));
    CHECK(adam.moments()[0].v[0] >= 0.0);
  }
  {
    AdamConfig decay;
    decay.weight_decay = 0.1;
    ParameterSet ps;
    auto& p = ps.add("p", Matrix::from_rows({{2.0, -2.0}}));
    Adam adam(decay);
    for (int i = 0; i < 3; ++i) {
      adam.step(ps);
      CHECK(adam.steps() == static_cast<std::uint64_t>(i + 1));
    }
    CHECK(p.value[0] < 2.0);
    CHECK(p.value[1] > -2.0);
  }
  {
    Matrix param(1, 2), grad(2, 1);
    AdamMoments mom{Matrix(1, 2), Matrix(1, 2)};
    CHECK_THROWS_AS(adam_update(param, grad, mom, 1, cfg), DimensionError);
  }
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet ps;
    auto bi = BiGruParams::create(ps, "bi", 3, 4, rng);
    auto& x = ps.add("x", random_matrix(5, 3, rng));
    Graph g;
    Rng drop(seed + 1);
    Var h = dropout(bigru(g.parameter(x), {}, bi), 0.3, Mode::kTrain, drop);
    Var loss = sum(mul(h, h));
    g.backward(loss);
    std::vector<double> out{loss.value()[0]};
    for (std::size_t i = 0; i < ps.size(); ++i)
      out.insert(out.end(), ps[i].grad.values().begin(), ps[i].grad.values().end());
    return out;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("forward ops stay finite on inputs in [-50, 50]") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterSet ps;
    auto bi = BiGruParams::create(ps, "bi", 3, 3, rng);
    Graph g;
    Var x = g.constant(random_matrix(4, 3, rng, -50, 50));
    Var y = g.constant(random_matrix(3, 4, rng, -50, 50));
    CHECK(matmul(x, y).value().all_finite());
    CHECK(softmax_rows(matmul(x, y)).value().all_finite());
    CHECK(sigmoid(x).value().all_finite());
    CHECK(tanh(x).value().all_finite());
    CHECK(bigru(x, {}, bi).value().all_finite());
    CHECK(cross_entropy(softmax_rows(select_rows(x, std::vector<std::size_t>{0})), 1).value().all_finite());
  }
}

}  // TEST_SUITE

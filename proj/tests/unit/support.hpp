#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "qan/autodiff.hpp"
#include "qan/matrix.hpp"
#include "qan/random.hpp"

namespace qan::test {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("qan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(QAN_FIXTURES_DIR) / name;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

// Worst relative error between the tape gradient of every parameter and a
// central difference of `loss_fn`. Entries where both are tiny are compared
// absolutely.
template <typename LossFn>
double max_gradient_error(ParameterSet& params, LossFn loss_fn, double h = 1e-4,
                          double abs_floor = 1e-6, std::string* worst_name = nullptr) {
  params.zero_grad();
  {
    Graph g;
    Var loss = loss_fn(g);
    g.backward(loss);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Matrix analytic = p.grad;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + h;
      double up;
      {
        Graph g;
        up = loss_fn(g).value()[0];
      }
      p.value[k] = saved - h;
      double down;
      {
        Graph g;
        down = loss_fn(g).value()[0];
      }
      p.value[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double diff = std::abs(numeric - analytic[k]);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[k]));
      const double err = scale < abs_floor ? (diff <= abs_floor ? 0.0 : diff) : diff / scale;
      if (err > worst) {
        worst = err;
        if (worst_name) *worst_name = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return worst;
}

}  // namespace qan::test

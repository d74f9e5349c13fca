#include "qan/adam.hpp"

#include <cmath>

#include "qan/error.hpp"

namespace qan {

void adam_update(Matrix& param, const Matrix& grad, AdamMoments& moments, std::uint64_t t,
                 const AdamConfig& c) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam: gradient shape " + grad.shape_string() +
                         " does not match parameter " + param.shape_string());
  }
  if (moments.m.empty()) {
    moments.m = Matrix(param.rows(), param.cols());
    moments.v = Matrix(param.rows(), param.cols());
  }
  if (!moments.m.same_shape(param) || !moments.v.same_shape(param)) {
    throw DimensionError("adam: moment shape does not match parameter " + param.shape_string());
  }
  if (t == 0) throw ConfigError("adam: step counter must be incremented before the update");

  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + c.weight_decay * param[i];
    double& m = moments.m[i];
    double& v = moments.v[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    param[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

void Adam::step(ParameterSet& params) {
  if (moments_.empty()) moments_.resize(params.size());
  if (moments_.size() != params.size()) {
    throw DimensionError("adam: parameter set changed size between steps");
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update(params[i].value, params[i].grad, moments_[i], t_, config_);
}

}  // namespace qan

#include "nlreg/adam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nlreg {

AdamState AdamState::zeros(const NlistaModel& model) {
  AdamState state;
  state.layers.resize(model.layers.size());
  for (auto& mo : state.layers) {
    mo.mW = Matrix::Zero(model.m(), model.n());
    mo.vW = Matrix::Zero(model.m(), model.n());
  }
  return state;
}

void adam_step(NlistaModel& model, const std::vector<LayerGradient>& grads, AdamState& state, double lr,
               const AdamConfig& c) {
  if (grads.size() > model.layers.size()) throw std::invalid_argument("more gradients than layers");
  if (state.layers.size() < grads.size()) throw std::invalid_argument("optimizer state does not cover the model");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double step_size = lr / bc1;
  const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);

  auto scalar = [&](double& param, double& m, double& v, double g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    param -= step_size * m / (std::sqrt(v) * inv_sqrt_bc2 + c.epsilon);
  };

  for (std::size_t t = 0; t < grads.size(); ++t) {
    const LayerGradient& g = grads[t];
    if (g.W.size() == 0) continue;
    NlistaLayer& layer = model.layers[t];
    auto& mo = state.layers[t];
    if (g.W.rows() != layer.W.rows() || g.W.cols() != layer.W.cols())
      throw std::invalid_argument("gradient shape does not match layer");

    const Index count = layer.W.size();
    double* w = layer.W.data();
    double* m = mo.mW.data();
    double* v = mo.vW.data();
    const double* gw = g.W.data();
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < count; ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gw[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gw[i] * gw[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + c.epsilon);
    }
    scalar(layer.beta, mo.m_beta, mo.v_beta, g.beta);
    scalar(layer.theta, mo.m_theta, mo.v_theta, g.theta);
    layer.theta = std::max(layer.theta, 0.0);
  }
}

}  // namespace nlreg

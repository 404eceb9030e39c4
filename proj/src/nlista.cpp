#include "nlreg/nlista.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"

#include <cmath>
#include <stdexcept>

namespace nlreg {

const NonlinearFunction& NlistaModel::update_function() const { return get_function(update_f_id); }

NlistaModel make_model(std::shared_ptr<const Matrix> A, const std::string& f_id, int depth, bool lista) {
  if (!A) throw std::invalid_argument("model needs a dictionary");
  if (depth <= 0) throw std::invalid_argument("model depth must be positive");
  NlistaModel model;
  model.f_id = get_function(f_id).id();
  model.update_f_id = lista ? std::string("identity") : model.f_id;
  const double sup = model.update_function().derivative_sup();
  model.layers.assign(static_cast<std::size_t>(depth), NlistaLayer{*A, 1.0 / (sup * sup), 0.1});
  model.A = std::move(A);
  return model;
}

GammaClip gamma_clip(const Vector& v) {
  const double norm = v.norm();
  if (norm <= 1.0) return {1.0, v};
  return {1.0 / norm, v / norm};
}

namespace {

int resolve_depth(const NlistaModel& model, int depth) {
  if (depth < 0) return model.depth();
  if (depth > model.depth()) throw std::invalid_argument("requested depth exceeds the number of layers");
  return depth;
}

}  // namespace

Vector forward(const NlistaModel& model, const Vector& y, ForwardTape* tape, const ForwardOptions& options) {
  if (y.size() != model.m())
    throw DimensionError("observation has " + std::to_string(y.size()) + " entries, dictionary has " +
                         std::to_string(model.m()) + " rows");
  const int depth = resolve_depth(model, options.depth);
  if (!options.fixed_gammas.empty() && static_cast<int>(options.fixed_gammas.size()) < depth)
    throw std::invalid_argument("fixed gammas do not cover every layer");
  const NonlinearFunction& f = model.update_function();
  const Matrix& A = *model.A;

  if (tape) {
    tape->layers.clear();
    tape->layers.reserve(static_cast<std::size_t>(depth));
  }
  Vector x = Vector::Zero(model.n());
  for (int t = 0; t < depth; ++t) {
    const NlistaLayer& layer = model.layers[static_cast<std::size_t>(t)];
    Vector u = A * x;
    Vector r = y - f.values(u);
    Vector v = f.derivatives(u).cwiseProduct(r);
    const double gamma =
        options.fixed_gammas.empty() ? gamma_clip(v).scale : options.fixed_gammas[static_cast<std::size_t>(t)];
    Vector z = x + (layer.beta * gamma) * (layer.W.transpose() * v);
    Vector next = soft_threshold(z, layer.theta);
    if (tape) tape->layers.push_back({std::move(x), std::move(u), std::move(r), std::move(v), gamma, std::move(z)});
    x = std::move(next);
  }
  return x;
}

std::vector<Vector> forward_iterates(const NlistaModel& model, const Vector& y, int depth) {
  ForwardTape tape;
  const Vector last = forward(model, y, &tape, ForwardOptions{depth, {}});
  std::vector<Vector> out;
  out.reserve(tape.layers.size());
  for (std::size_t t = 1; t < tape.layers.size(); ++t) out.push_back(tape.layers[t].x_in);
  out.push_back(last);
  return out;
}

std::vector<LayerGradient> backward(const NlistaModel& model, const ForwardTape& tape, const Vector& grad_out,
                                    const BackwardOptions& options) {
  const int depth = static_cast<int>(tape.layers.size());
  if (depth == 0) throw std::logic_error("backward needs a tape recorded by forward");
  if (grad_out.size() != model.n()) throw DimensionError("output gradient does not match the signal length");
  const NonlinearFunction& f = model.update_function();
  const Matrix& A = *model.A;

  std::vector<LayerGradient> grads(static_cast<std::size_t>(depth));
  Vector g = grad_out;
  for (int t = depth - 1; t >= options.first_trainable && t >= 0; --t) {
    const LayerTape& L = tape.layers[static_cast<std::size_t>(t)];
    const NlistaLayer& layer = model.layers[static_cast<std::size_t>(t)];
    LayerGradient& out = grads[static_cast<std::size_t>(t)];

    Vector gz = Vector::Zero(g.size());
    double g_theta = 0.0;
    for (Index i = 0; i < g.size(); ++i) {
      if (std::abs(L.z[i]) > layer.theta) {
        gz[i] = g[i];
        g_theta -= (L.z[i] > 0 ? 1.0 : -1.0) * g[i];
      }
    }
    out.theta = g_theta;
    out.beta = L.gamma * (layer.W.transpose() * L.v).dot(gz);
    out.W = (layer.beta * L.gamma) * L.v * gz.transpose();
    if (t == options.first_trainable) break;

    const Vector g_scaled = layer.beta * (layer.W * gz);  // gradient w.r.t. gamma * v
    Vector gv;
    const double vnorm = L.v.norm();
    if (options.gamma == GammaGradient::Exact && vnorm > 1.0) {
      const Vector unit = L.v / vnorm;
      gv = (g_scaled - unit * unit.dot(g_scaled)) / vnorm;
    } else {
      gv = L.gamma * g_scaled;
    }
    const Vector du = f.second_derivatives(L.u).cwiseProduct(L.r) - f.derivatives(L.u).cwiseAbs2();
    g = gz + A.transpose() * gv.cwiseProduct(du);
  }
  return grads;
}

double mse_loss(const Matrix& X, const Matrix& truth, Matrix* grad) {
  if (X.rows() != truth.rows() || X.cols() != truth.cols() || X.cols() == 0)
    throw DimensionError("estimate and truth batches differ in shape");
  const double batch = static_cast<double>(X.cols());
  if (grad) *grad = (2.0 / batch) * (X - truth);
  return (X - truth).squaredNorm() / batch;
}

}  // namespace nlreg

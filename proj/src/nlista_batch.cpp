#include "nlreg/errors.hpp"
#include "nlreg/nlista.hpp"

#include <cmath>
#include <stdexcept>

namespace nlreg {

namespace {

int resolve_depth(const NlistaModel& model, int depth) {
  if (depth < 0) return model.depth();
  if (depth > model.depth()) throw std::invalid_argument("requested depth exceeds the number of layers");
  return depth;
}

void check_batch(const NlistaModel& model, const Matrix& Y) {
  if (Y.rows() != model.m())
    throw DimensionError("observation batch has " + std::to_string(Y.rows()) + " rows, dictionary has " +
                         std::to_string(model.m()));
}

// One layer on a batch. `tape` may be null.
void layer_step(const NlistaModel& model, const NlistaLayer& layer, const Matrix& Y, Matrix& X,
                BatchLayerTape* tape) {
  const NonlinearFunction& f = model.update_function();
  const Index B = Y.cols();
  const Index m = model.m();

  Matrix U(m, B);
  U.noalias() = *model.A * X;
  Matrix R(m, B), V(m, B), Vs(m, B);
  Vector gamma(B);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < B; ++j) {
    for (Index i = 0; i < m; ++i) {
      const double u = U(i, j);
      R(i, j) = Y(i, j) - f.value(u);
      V(i, j) = f.derivative(u) * R(i, j);
    }
    const double norm = V.col(j).norm();
    gamma[j] = norm <= 1.0 ? 1.0 : 1.0 / norm;
    Vs.col(j) = gamma[j] * V.col(j);
  }
  Matrix P(model.n(), B);
  P.noalias() = layer.W.transpose() * Vs;

  Matrix Z(model.n(), B);
  const double theta = layer.theta;
  if (theta < 0 || std::isnan(theta)) throw std::invalid_argument("threshold must be nonnegative");
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < B; ++j) {
    for (Index i = 0; i < Z.rows(); ++i) {
      const double z = X(i, j) + layer.beta * P(i, j);
      Z(i, j) = z;
    }
  }
  if (tape) *tape = {X, std::move(U), std::move(R), std::move(V), std::move(gamma), std::move(P), Z};
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < B; ++j)
    for (Index i = 0; i < Z.rows(); ++i) X(i, j) = soft_threshold(Z(i, j), theta);
}

}  // namespace

Matrix forward_batch(const NlistaModel& model, const Matrix& Y, BatchTape* tape, int depth) {
  check_batch(model, Y);
  const int T = resolve_depth(model, depth);
  Matrix X = Matrix::Zero(model.n(), Y.cols());
  if (tape) tape->layers.assign(static_cast<std::size_t>(T), {});
  for (int t = 0; t < T; ++t)
    layer_step(model, model.layers[static_cast<std::size_t>(t)], Y, X,
               tape ? &tape->layers[static_cast<std::size_t>(t)] : nullptr);
  return X;
}

Matrix forward_batch_serial(const NlistaModel& model, const Matrix& Y, int depth) {
  check_batch(model, Y);
  Matrix X(model.n(), Y.cols());
  for (Index j = 0; j < Y.cols(); ++j) X.col(j) = forward(model, Y.col(j), nullptr, ForwardOptions{depth, {}});
  return X;
}

std::vector<Matrix> forward_batch_iterates(const NlistaModel& model, const Matrix& Y, int depth) {
  check_batch(model, Y);
  const int T = resolve_depth(model, depth);
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(T));
  Matrix X = Matrix::Zero(model.n(), Y.cols());
  for (int t = 0; t < T; ++t) {
    layer_step(model, model.layers[static_cast<std::size_t>(t)], Y, X, nullptr);
    out.push_back(X);
  }
  return out;
}

std::vector<LayerGradient> backward_batch(const NlistaModel& model, const BatchTape& tape, const Matrix& grad_out,
                                          const BackwardOptions& options) {
  const int depth = static_cast<int>(tape.layers.size());
  if (depth == 0) throw std::logic_error("backward needs a tape recorded by forward");
  if (grad_out.rows() != model.n() || grad_out.cols() != tape.layers.front().z.cols())
    throw DimensionError("output gradient does not match the batch shape");
  const NonlinearFunction& f = model.update_function();
  const Index B = grad_out.cols();
  const Index n = model.n();
  const Index m = model.m();

  std::vector<LayerGradient> grads(static_cast<std::size_t>(depth));
  Matrix G = grad_out;
  Matrix Gz(n, B), Vs(m, B), Gs(m, B), Gu(m, B);
  Vector theta_parts(B), beta_parts(B);
  for (int t = depth - 1; t >= options.first_trainable && t >= 0; --t) {
    const BatchLayerTape& L = tape.layers[static_cast<std::size_t>(t)];
    const NlistaLayer& layer = model.layers[static_cast<std::size_t>(t)];
    LayerGradient& out = grads[static_cast<std::size_t>(t)];

#pragma omp parallel for schedule(static)
    for (Index j = 0; j < B; ++j) {
      double th = 0.0, be = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double z = L.z(i, j);
        if (std::abs(z) > layer.theta) {
          const double g = G(i, j);
          Gz(i, j) = g;
          th -= (z > 0 ? 1.0 : -1.0) * g;
          be += L.p(i, j) * g;
        } else {
          Gz(i, j) = 0.0;
        }
      }
      theta_parts[j] = th;
      beta_parts[j] = be;
      Vs.col(j) = L.gamma[j] * L.v.col(j);
    }
    // Per-sample partial sums are reduced in index order so that the result
    // does not depend on the thread count.
    out.theta = theta_parts.sum();
    out.beta = beta_parts.sum();
    out.W.noalias() = layer.beta * Vs * Gz.transpose();
    if (t == options.first_trainable) break;

    Gs.noalias() = layer.beta * layer.W * Gz;
#pragma omp parallel for schedule(static)
    for (Index j = 0; j < B; ++j) {
      const double vnorm = L.v.col(j).norm();
      if (options.gamma == GammaGradient::Exact && vnorm > 1.0) {
        const double proj = L.v.col(j).dot(Gs.col(j)) / (vnorm * vnorm);
        Gu.col(j) = (Gs.col(j) - proj * L.v.col(j)) / vnorm;
      } else {
        Gu.col(j) = L.gamma[j] * Gs.col(j);
      }
      for (Index i = 0; i < m; ++i) {
        const double u = L.u(i, j);
        const double d1 = f.derivative(u);
        Gu(i, j) *= f.second_derivative(u) * L.r(i, j) - d1 * d1;
      }
    }
    G = Gz;
    G.noalias() += model.A->transpose() * Gu;
  }
  return grads;
}

std::vector<LayerGradient> backward_batch_serial(const NlistaModel& model, const Matrix& Y, const Matrix& grad_out,
                                                 int depth, const BackwardOptions& options) {
  check_batch(model, Y);
  if (grad_out.cols() != Y.cols()) throw DimensionError("output gradient does not match the batch shape");
  std::vector<LayerGradient> total;
  for (Index j = 0; j < Y.cols(); ++j) {
    ForwardTape tape;
    forward(model, Y.col(j), &tape, ForwardOptions{depth, {}});
    auto grads = backward(model, tape, grad_out.col(j), options);
    if (total.empty()) {
      total = std::move(grads);
      continue;
    }
    for (std::size_t t = 0; t < grads.size(); ++t) {
      total[t].beta += grads[t].beta;
      total[t].theta += grads[t].theta;
      if (grads[t].W.size() > 0) total[t].W += grads[t].W;
    }
  }
  return total;
}

}  // namespace nlreg

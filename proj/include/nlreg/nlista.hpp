#pragma once

#include "nlreg/core.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nlreg {

struct NlistaLayer {
  Matrix W;  // m x n
  double beta = 1.0;
  double theta = 0.0;  // kept >= 0 by the optimizer
};

struct TrainLogEntry {
  long step = 0;  // training step within the stage
  int stage = 0;
  double lr = 0.0;
  double val_loss = 0.0;
};

/// Unrolled network x <- eta(x + beta gamma W^T (f'(Ax) . (y - f(Ax))), theta),
/// one parameter set per layer.
///
/// `update_f_id` is the nonlinearity used inside the update. It equals f_id for
/// NLISTA; the LISTA baseline is the same network with the identity here, i.e.
/// a learner that ignores the nonlinearity of the data it is trained on.
struct NlistaModel {
  std::vector<NlistaLayer> layers;
  std::string f_id;
  std::string update_f_id;
  std::shared_ptr<const Matrix> A;
  std::vector<TrainLogEntry> train_log;
  int completed_stages = 0;

  Index m() const { return A->rows(); }
  Index n() const { return A->cols(); }
  int depth() const { return static_cast<int>(layers.size()); }
  const NonlinearFunction& update_function() const;
  bool is_lista() const { return update_f_id != f_id; }
};

/// `depth` layers initialised to W = A, beta = 1/sup|f'|^2, theta = 0.1.
NlistaModel make_model(std::shared_ptr<const Matrix> A, const std::string& f_id, int depth, bool lista = false);

struct GammaClip {
  double scale = 1.0;
  Vector scaled;
};

/// Scale 1 when ||v|| <= 1, otherwise 1/||v||; the scaled vector never exceeds
/// unit norm.
GammaClip gamma_clip(const Vector& v);

struct LayerTape {
  Vector x_in;  // x^(t)
  Vector u;     // A x^(t)
  Vector r;     // y - f(u)
  Vector v;     // f'(u) . r
  double gamma = 1.0;
  Vector z;     // pre-threshold activation
};

struct ForwardTape {
  std::vector<LayerTape> layers;
};

struct ForwardOptions {
  int depth = -1;  // number of layers to run; -1 means all
  /// Replaces the computed gamma of each layer. Used to differentiate the
  /// stop-gradient convention by finite differences.
  std::span<const double> fixed_gammas;
};

/// Single-sample forward pass from x^(0) = 0. Throws DimensionError when y does
/// not have m entries.
Vector forward(const NlistaModel& model, const Vector& y, ForwardTape* tape = nullptr, const ForwardOptions& options = {});

/// Every layer output x^(1) .. x^(depth).
std::vector<Vector> forward_iterates(const NlistaModel& model, const Vector& y, int depth = -1);

enum class GammaGradient { StopGradient, Exact };

struct LayerGradient {
  Matrix W;  // empty for layers that receive no gradient
  double beta = 0.0;
  double theta = 0.0;
};

struct BackwardOptions {
  GammaGradient gamma = GammaGradient::StopGradient;
  int first_trainable = 0;  // layers before this index are frozen
};

/// Reverse-mode gradients of <grad_out, x^(depth)> with respect to every
/// trainable layer's parameters. Result has one entry per taped layer.
std::vector<LayerGradient> backward(const NlistaModel& model, const ForwardTape& tape, const Vector& grad_out,
                                    const BackwardOptions& options = {});

// Batched kernels. Columns are samples. The OpenMP kernels agree with the
// per-sample reference above to rounding (GEMM changes summation order).

struct BatchLayerTape {
  Matrix x_in;  // n x B
  Matrix u;     // m x B
  Matrix r;     // m x B
  Matrix v;     // m x B, unscaled
  Vector gamma; // B
  Matrix p;     // W^T (gamma . v), n x B
  Matrix z;     // n x B
};

struct BatchTape {
  std::vector<BatchLayerTape> layers;
};

Matrix forward_batch(const NlistaModel& model, const Matrix& Y, BatchTape* tape = nullptr, int depth = -1);
Matrix forward_batch_serial(const NlistaModel& model, const Matrix& Y, int depth = -1);

/// Per-layer outputs x^(1) .. x^(depth) for a batch, without a tape.
std::vector<Matrix> forward_batch_iterates(const NlistaModel& model, const Matrix& Y, int depth = -1);

/// Gradients of sum_j <G_j, x_j^(depth)> accumulated over the batch.
std::vector<LayerGradient> backward_batch(const NlistaModel& model, const BatchTape& tape, const Matrix& grad_out,
                                          const BackwardOptions& options = {});
std::vector<LayerGradient> backward_batch_serial(const NlistaModel& model, const Matrix& Y, const Matrix& grad_out,
                                                 int depth, const BackwardOptions& options = {});

/// Mean over the batch of ||X_j - X*_j||^2 and its gradient with respect to X.
double mse_loss(const Matrix& X, const Matrix& truth, Matrix* grad = nullptr);

}  // namespace nlreg

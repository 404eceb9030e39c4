#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nlreg {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;  // column-major

/// Element-wise nonlinearity of the form slope*x + cos(frequency*x), or the
/// identity. Value, first and second derivative are exact.
class NonlinearFunction {
 public:
  static NonlinearFunction identity();
  static NonlinearFunction linear_plus_cosine(std::string id, double slope, int frequency);

  const std::string& id() const { return id_; }
  const std::string& closed_form() const { return closed_form_; }
  /// Cosine frequency k; empty for the identity.
  std::optional<int> frequency() const;
  double slope() const { return slope_; }

  /// sup |f'| over the real line.
  double derivative_sup() const { return derivative_sup_; }
  /// inf |f'| over the real line; positive for every registered entry.
  double derivative_inf() const { return derivative_inf_; }

  double value(double x) const {
    return has_cosine_ ? slope_ * x + std::cos(k_ * x) : slope_ * x;
  }
  double derivative(double x) const {
    return has_cosine_ ? slope_ - k_ * std::sin(k_ * x) : slope_;
  }
  double second_derivative(double x) const {
    return has_cosine_ ? -k_ * k_ * std::cos(k_ * x) : 0.0;
  }

  template <class Derived>
  auto values(const Eigen::MatrixBase<Derived>& u) const {
    return u.unaryExpr([this](double x) { return value(x); });
  }
  template <class Derived>
  auto derivatives(const Eigen::MatrixBase<Derived>& u) const {
    return u.unaryExpr([this](double x) { return derivative(x); });
  }
  template <class Derived>
  auto second_derivatives(const Eigen::MatrixBase<Derived>& u) const {
    return u.unaryExpr([this](double x) { return second_derivative(x); });
  }

 private:
  NonlinearFunction() = default;

  std::string id_;
  std::string closed_form_;
  bool has_cosine_ = false;
  double slope_ = 1.0;
  double k_ = 0.0;
  double derivative_sup_ = 1.0;
  double derivative_inf_ = 1.0;
};

/// One observation y = f(A x*) + eps. The dictionary is shared between all
/// instances of an experiment.
struct ProblemInstance {
  std::shared_ptr<const Matrix> A;
  Vector x_star;
  Vector epsilon;
  Vector y;
  std::uint64_t seed = 0;
  std::optional<double> snr_db;
  std::optional<double> cond_target;
  std::string f_id;

  const Matrix& dictionary() const { return *A; }
  Index m() const { return A->rows(); }
  Index n() const { return A->cols(); }
};

/// Per-iteration bookkeeping of the line searches, kept so that traces can be
/// audited after the fact.
struct StepInfo {
  double alpha = 1.0;       // accepted BB curvature estimate
  double lambda = 0.0;      // l1 weight in force during this step
  double step_length = 1.0; // STELA gamma; 1 for the others
  long backtracks = 0;
};

struct SolverTrace {
  std::string solver_id;
  std::vector<Vector> iterates;  // x^(0) .. x^(T)
  std::vector<std::chrono::nanoseconds> wall_times;
  std::map<std::string, double> hyperparams;
  std::vector<StepInfo> steps;
  std::optional<std::size_t> stalled_at;  // iteration whose line search hit the cap

  const Vector& final_iterate() const { return iterates.back(); }
};

/// sign(u) * max(|u| - a, 0), element-wise. Throws std::invalid_argument for a < 0.
Vector soft_threshold(const Vector& u, double a);
double soft_threshold(double u, double a);

/// 1/2 ||y - f(Ax)||^2
double loss(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f);
double loss(const Vector& x, const Matrix& A, const Vector& y, const NonlinearFunction& f);

/// A^T diag(f'(Ax)) (f(Ax) - y)
Vector loss_gradient(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f);
Vector loss_gradient(const Vector& x, const Matrix& A, const Vector& y, const NonlinearFunction& f);

/// 10 log10(mean ||xhat - x*||^2 / mean ||x*||^2) over the columns of the two
/// batches. Exact recovery yields -infinity.
double nmse_db(const Matrix& estimates, const Matrix& truths);

/// CSV rendering of an NMSE value; negative infinity becomes "-inf".
std::string format_db(double value);

}  // namespace nlreg

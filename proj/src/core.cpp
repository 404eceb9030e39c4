#include "nlreg/core.hpp"
#include "nlreg/errors.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace nlreg {

NonlinearFunction NonlinearFunction::identity() {
  NonlinearFunction f;
  f.id_ = "identity";
  f.closed_form_ = "f(x) = x";
  return f;
}

NonlinearFunction NonlinearFunction::linear_plus_cosine(std::string id, double slope, int frequency) {
  if (frequency <= 0) throw std::invalid_argument("cosine frequency must be positive");
  if (slope <= frequency) throw std::invalid_argument("slope must exceed the cosine frequency so that f' never vanishes");
  NonlinearFunction f;
  f.id_ = std::move(id);
  f.has_cosine_ = true;
  f.slope_ = slope;
  f.k_ = frequency;
  f.derivative_sup_ = slope + frequency;
  f.derivative_inf_ = slope - frequency;
  char buf[96];
  if (frequency == 1)
    std::snprintf(buf, sizeof buf, "f(x) = %gx + cos(x)", slope);
  else
    std::snprintf(buf, sizeof buf, "f(x) = %gx + cos(%dx)", slope, frequency);
  f.closed_form_ = buf;
  return f;
}

std::optional<int> NonlinearFunction::frequency() const {
  if (!has_cosine_) return std::nullopt;
  return static_cast<int>(k_);
}

double soft_threshold(double u, double a) {
  const double mag = std::abs(u) - a;
  if (mag <= 0.0) return 0.0;
  return u > 0.0 ? mag : -mag;
}

Vector soft_threshold(const Vector& u, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("soft_threshold: threshold must be nonnegative");
  return u.unaryExpr([a](double v) { return soft_threshold(v, a); });
}

namespace {

void check_shapes(const Vector& x, const Matrix& A, const Vector& y) {
  if (x.size() != A.cols())
    throw DimensionError("x has length " + std::to_string(x.size()) + " but A has " +
                         std::to_string(A.cols()) + " columns");
  if (y.size() != A.rows())
    throw DimensionError("y has length " + std::to_string(y.size()) + " but A has " +
                         std::to_string(A.rows()) + " rows");
}

}  // namespace

double loss(const Vector& x, const Matrix& A, const Vector& y, const NonlinearFunction& f) {
  check_shapes(x, A, y);
  const Vector u = A * x;
  return 0.5 * (y - f.values(u)).squaredNorm();
}

double loss(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f) {
  return loss(x, problem.dictionary(), problem.y, f);
}

Vector loss_gradient(const Vector& x, const Matrix& A, const Vector& y, const NonlinearFunction& f) {
  check_shapes(x, A, y);
  const Vector u = A * x;
  const Vector weighted = f.derivatives(u).cwiseProduct(f.values(u) - y);
  return A.transpose() * weighted;
}

Vector loss_gradient(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f) {
  return loss_gradient(x, problem.dictionary(), problem.y, f);
}

double nmse_db(const Matrix& estimates, const Matrix& truths) {
  if (estimates.size() == 0 || truths.size() == 0) throw DimensionError("nmse_db: empty batch");
  if (estimates.rows() != truths.rows() || estimates.cols() != truths.cols())
    throw DimensionError("nmse_db: estimate and truth batches differ in shape");
  const double signal = truths.squaredNorm();
  if (!(signal > 0.0)) throw UndefinedMetricError("nmse_db: ground truth batch is identically zero");
  const double error = (estimates - truths).squaredNorm();
  if (error == 0.0) return -std::numeric_limits<double>::infinity();
  // The batch means share the same divisor, so it cancels in the ratio.
  return 10.0 * std::log10(error / signal);
}

std::string format_db(double value) {
  if (std::isinf(value)) return value < 0 ? "-inf" : "inf";
  if (std::isnan(value)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

}  // namespace nlreg

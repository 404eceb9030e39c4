#pragma once

#include "nlreg/core.hpp"

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace nlreg {

/// Divided differences (f(a_i) - f(b_i)) / (a_i - b_i), falling back to f'(a_i)
/// when a_i and b_i (nearly) coincide. Realises grad f(xi) of the mean value
/// theorem without locating xi.
struct MeanValueDiagonal {
  Vector entries;
};
MeanValueDiagonal mean_value_diag(const Vector& a, const Vector& b, const NonlinearFunction& f);

/// W = (1/(beta gamma)) D1^-1 D2^-1 A with D1 = diag f'(A x_t) and D2 the mean
/// value diagonal between A x* and A x_t. Throws SingularityError when either
/// diagonal has an entry below 1e-12 in magnitude.
Matrix oracle_W(const Vector& x_t, const ProblemInstance& problem, const NonlinearFunction& f, double beta,
                double gamma);

/// The generalized Gram matrix beta gamma W^T D1 D2 A.
Matrix generalized_gram(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                        const NonlinearFunction& f, double beta, double gamma);

struct OmegaMembership {
  double max_diag_deviation = 0.0;  // max_i |G_ii - 1|
  double max_cross = 0.0;           // max_{i != j} |G_ij|
  bool member(double diag_tol = 1e-10) const { return max_diag_deviation <= diag_tol && max_cross < 1.0; }
};
OmegaMembership omega_membership(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                                 const NonlinearFunction& f, double beta, double gamma);

struct MuConstants {
  double mu1 = 0.0;  // max_{i != j} |beta gamma W_i^T D1 D2 A_j|
  double mu2 = 0.0;  // max_i ||beta gamma W_i^T D1||_1
};
MuConstants mu_constants(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                         const NonlinearFunction& f, double beta, double gamma);

struct CertificateStep {
  int t = 0;
  double mu1 = 0.0;             // constants of the step x^(t) -> x^(t+1); NaN on the last row
  double mu2 = 0.0;
  double theta_required = 0.0;  // mu1 ||x* - x^(t)||_1 + mu2 sigma
  bool support_ok = true;       // x^(t) vanishes off the support of x*
  double err_l2 = 0.0;          // ||x^(t) - x*||_2
  double bound = 0.0;           // with the running maxima up to step t-1
  double bound_final = 0.0;     // with the maxima over the whole run
};

struct ConvergenceCertificate {
  std::vector<CertificateStep> per_t;  // t = 0 .. T
  double q = 0.0;      // mu1_max (2s - 1)
  double c_eps = 0.0;  // mu2_max sum_{i<T} q^i
  int s = 0;
  double c_x = 0.0;
  double sigma = 0.0;
  double mu1_max = 0.0;
  double mu2_max = 0.0;

  /// s < (1/mu1_max + 1) / 2, where q < 1.
  bool in_regime() const;
  bool support_ok() const;
  /// err_l2(t) <= bound(t) (1 + kThresholdSlack)^t (1 + rel_tol) at every t.
  bool bound_holds(double rel_tol = 1e-12) const;
};

/// Relative slack added to each oracle threshold so that rounding in the
/// cross terms cannot produce spurious support (the bound is attained exactly
/// for single-coordinate errors).
inline constexpr double kThresholdSlack = 1e-10;

/// Runs T steps of the NLISTA recurrence with beta = 1, gamma from the clip,
/// the oracle W and the smallest threshold allowed by the support lemma.
ConvergenceCertificate certified_run(const ProblemInstance& problem, const NonlinearFunction& f, int T);

/// Columns: t, mu1, mu2, theta, err, bound, bound_final, support_ok.
void write_certificate_csv(const ConvergenceCertificate& cert, const std::filesystem::path& path);
nlohmann::json certificate_summary(const ConvergenceCertificate& cert);

}  // namespace nlreg

#include "nlreg/theory.hpp"
#include "nlreg/container.hpp"
#include "nlreg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace nlreg {

MeanValueDiagonal mean_value_diag(const Vector& a, const Vector& b, const NonlinearFunction& f) {
  if (a.size() != b.size()) throw DimensionError("mean value arguments differ in length");
  MeanValueDiagonal out{Vector(a.size())};
  for (Index i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    out.entries[i] = std::abs(diff) > 1e-12 * scale ? (f.value(a[i]) - f.value(b[i])) / diff : f.derivative(a[i]);
  }
  return out;
}

namespace {

struct Diagonals {
  Vector d1, d2;
};

Diagonals diagonals(const Vector& x_t, const ProblemInstance& problem, const NonlinearFunction& f) {
  if (x_t.size() != problem.n()) throw DimensionError("iterate does not match the dictionary width");
  const Matrix& A = problem.dictionary();
  const Vector u = A * x_t;
  return {f.derivatives(u), mean_value_diag(A * problem.x_star, u, f).entries};
}

}  // namespace

Matrix oracle_W(const Vector& x_t, const ProblemInstance& problem, const NonlinearFunction& f, double beta,
                double gamma) {
  if (!(std::abs(beta * gamma) > 0.0)) throw SingularityError("beta * gamma must be nonzero");
  const auto [d1, d2] = diagonals(x_t, problem, f);
  if ((d1.array().abs() < 1e-12).any()) throw SingularityError("f' vanishes at A x_t");
  if ((d2.array().abs() < 1e-12).any()) throw SingularityError("mean value diagonal has a zero entry");
  const Vector scale = (d1.cwiseProduct(d2) * (beta * gamma)).cwiseInverse();
  return scale.asDiagonal() * problem.dictionary();
}

Matrix generalized_gram(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                        const NonlinearFunction& f, double beta, double gamma) {
  if (W.rows() != problem.m() || W.cols() != problem.n()) throw DimensionError("W does not match the dictionary");
  const auto [d1, d2] = diagonals(x_t, problem, f);
  return (beta * gamma) * W.transpose() * (d1.cwiseProduct(d2).asDiagonal() * problem.dictionary());
}

OmegaMembership omega_membership(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                                 const NonlinearFunction& f, double beta, double gamma) {
  const Matrix G = generalized_gram(W, x_t, problem, f, beta, gamma);
  OmegaMembership out;
  for (Index j = 0; j < G.cols(); ++j)
    for (Index i = 0; i < G.rows(); ++i) {
      if (i == j)
        out.max_diag_deviation = std::max(out.max_diag_deviation, std::abs(G(i, i) - 1.0));
      else
        out.max_cross = std::max(out.max_cross, std::abs(G(i, j)));
    }
  return out;
}

MuConstants mu_constants(const Matrix& W, const Vector& x_t, const ProblemInstance& problem,
                         const NonlinearFunction& f, double beta, double gamma) {
  const Matrix G = generalized_gram(W, x_t, problem, f, beta, gamma);
  MuConstants out;
  for (Index j = 0; j < G.cols(); ++j)
    for (Index i = 0; i < G.rows(); ++i)
      if (i != j) out.mu1 = std::max(out.mu1, std::abs(G(i, j)));
  const Vector d1 = f.derivatives(problem.dictionary() * x_t);
  // Row i of (beta gamma W^T D1) is column i of W scaled by d1.
  const Matrix rows = (beta * gamma) * (d1.asDiagonal() * W);
  out.mu2 = rows.cwiseAbs().colwise().sum().maxCoeff();
  return out;
}

bool ConvergenceCertificate::in_regime() const {
  return mu1_max > 0.0 ? s < 0.5 * (1.0 / mu1_max + 1.0) : true;
}

bool ConvergenceCertificate::support_ok() const {
  return std::all_of(per_t.begin(), per_t.end(), [](const CertificateStep& r) { return r.support_ok; });
}

bool ConvergenceCertificate::bound_holds(double rel_tol) const {
  // Each threshold carries the slack once, so the error may exceed the bound
  // by that factor per step.
  return std::all_of(per_t.begin(), per_t.end(), [rel_tol](const CertificateStep& r) {
    return r.err_l2 <= r.bound * std::pow(1.0 + kThresholdSlack, r.t) * (1.0 + rel_tol);
  });
}

namespace {

// s c_x q^t + 2 s sigma mu2 sum_{i<t} q^i
double theorem_bound(int t, int s, double c_x, double sigma, double mu1, double mu2) {
  const double q = mu1 * (2.0 * s - 1.0);
  double geometric = 0.0, power = 1.0;
  for (int i = 0; i < t; ++i) {
    geometric += power;
    power *= q;
  }
  return s * c_x * power + 2.0 * s * sigma * mu2 * geometric;
}

}  // namespace

ConvergenceCertificate certified_run(const ProblemInstance& problem, const NonlinearFunction& f, int T) {
  if (T < 0) throw std::invalid_argument("T must be nonnegative");
  if (problem.x_star.size() != problem.n() || problem.y.size() != problem.m())
    throw DimensionError("instance vectors do not match the dictionary");
  const Matrix& A = problem.dictionary();
  const Vector& x_star = problem.x_star;

  ConvergenceCertificate cert;
  cert.s = static_cast<int>((x_star.array() != 0.0).count());
  cert.c_x = x_star.lpNorm<Eigen::Infinity>();
  cert.sigma = problem.epsilon.lpNorm<1>();

  auto support_ok = [&](const Vector& x) {
    for (Index i = 0; i < x.size(); ++i)
      if (x_star[i] == 0.0 && x[i] != 0.0) return false;
    return true;
  };

  Vector x = Vector::Zero(problem.n());
  double mu1_run = 0.0, mu2_run = 0.0;
  for (int t = 0; t <= T; ++t) {
    CertificateStep row;
    row.t = t;
    row.support_ok = support_ok(x);
    row.err_l2 = (x - x_star).norm();
    row.bound = theorem_bound(t, cert.s, cert.c_x, cert.sigma, mu1_run, mu2_run);
    if (t == T) {
      row.mu1 = row.mu2 = row.theta_required = std::numeric_limits<double>::quiet_NaN();
      cert.per_t.push_back(row);
      break;
    }

    const Vector u = A * x;
    const Vector r = problem.y - f.values(u);
    const Vector v = f.derivatives(u).cwiseProduct(r);
    const double gamma = v.norm() <= 1.0 ? 1.0 : 1.0 / v.norm();
    const double beta = 1.0;
    const Matrix W = oracle_W(x, problem, f, beta, gamma);
    const MuConstants mu = mu_constants(W, x, problem, f, beta, gamma);
    row.mu1 = mu.mu1;
    row.mu2 = mu.mu2;
    row.theta_required = mu.mu1 * (x_star - x).lpNorm<1>() + mu.mu2 * cert.sigma;
    mu1_run = std::max(mu1_run, mu.mu1);
    mu2_run = std::max(mu2_run, mu.mu2);
    cert.per_t.push_back(row);

    const Vector z = x + (beta * gamma) * (W.transpose() * v);
    x = soft_threshold(z, row.theta_required * (1.0 + kThresholdSlack));
  }

  cert.mu1_max = mu1_run;
  cert.mu2_max = mu2_run;
  cert.q = mu1_run * (2.0 * cert.s - 1.0);
  double geometric = 0.0, power = 1.0;
  for (int i = 0; i < T; ++i) {
    geometric += power;
    power *= cert.q;
  }
  cert.c_eps = mu2_run * geometric;
  for (auto& row : cert.per_t)
    row.bound_final = theorem_bound(row.t, cert.s, cert.c_x, cert.sigma, mu1_run, mu2_run);
  return cert;
}

void write_certificate_csv(const ConvergenceCertificate& cert, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "t,mu1,mu2,theta,err,bound,bound_final,support_ok\n";
  for (const auto& r : cert.per_t)
    out << r.t << ',' << io::format_real(r.mu1) << ',' << io::format_real(r.mu2) << ','
        << io::format_real(r.theta_required) << ',' << io::format_real(r.err_l2) << ',' << io::format_real(r.bound)
        << ',' << io::format_real(r.bound_final) << ',' << (r.support_ok ? "true" : "false") << '\n';
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

nlohmann::json certificate_summary(const ConvergenceCertificate& cert) {
  return {{"s", cert.s},
          {"c_x", cert.c_x},
          {"sigma", cert.sigma},
          {"mu1_max", cert.mu1_max},
          {"mu2_max", cert.mu2_max},
          {"q", cert.q},
          {"c_eps", cert.c_eps},
          {"in_regime", cert.in_regime()},
          {"support_ok", cert.support_ok()},
          {"bound_holds", cert.bound_holds()},
          {"final_err", cert.per_t.empty() ? 0.0 : cert.per_t.back().err_l2},
          {"threshold_slack", kThresholdSlack}};
}

}  // namespace nlreg

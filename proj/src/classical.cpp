#include "nlreg/classical.hpp"
#include "nlreg/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>

namespace nlreg {

std::string_view solver_name(SolverId id) {
  switch (id) {
    case SolverId::Sparsa: return "sparsa";
    case SolverId::Fista: return "fista";
    case SolverId::Fpca: return "fpca";
    case SolverId::Stela: return "stela";
  }
  return "sparsa";
}

SolverId parse_solver(std::string_view name) {
  if (name == "sparsa") return SolverId::Sparsa;
  if (name == "fista") return SolverId::Fista;
  if (name == "fpca") return SolverId::Fpca;
  if (name == "stela") return SolverId::Stela;
  throw std::invalid_argument("unknown solver '" + std::string(name) + "' (expected sparsa, fista, fpca or stela)");
}

std::string_view bb_variant_name(BbVariant v) {
  switch (v) {
    case BbVariant::First: return "first";
    case BbVariant::Second: return "second";
    case BbVariant::Classic: return "classic";
  }
  return "classic";
}

BbVariant parse_bb_variant(std::string_view name) {
  if (name == "first") return BbVariant::First;
  if (name == "second") return BbVariant::Second;
  if (name == "classic") return BbVariant::Classic;
  throw std::invalid_argument("unknown BB variant '" + std::string(name) + "' (expected first, second or classic)");
}

void ClassicalConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(eta_factor > 1.0)) throw std::invalid_argument("eta_factor must exceed 1");
  if (!(xi > 0.0)) throw std::invalid_argument("xi must be positive");
  if (memory < 0) throw std::invalid_argument("memory must be nonnegative");
  if (max_iterations <= 0) throw std::invalid_argument("max_iterations must be positive");
  if (!(fpca_gamma0 > 0.0)) throw std::invalid_argument("fpca_gamma0 must be positive");
  if (!(stela_beta > 0.0 && stela_beta < 1.0)) throw std::invalid_argument("stela_beta must lie in (0, 1)");
  if (max_backtracks <= 0) throw std::invalid_argument("max_backtracks must be positive");
}

double default_lambda(SolverId solver, std::string_view f_id) {
  struct Row {
    std::string_view f;
    double sparsa, fista, fpca, stela;
  };
  static constexpr Row table[] = {
      {"2x+cos(x)", 0.5, 0.4, 0.5, 0.5},
      {"10x+cos(2x)", 11.0, 11.0, 8.0, 11.0},
      {"10x+cos(3x)", 12.0, 12.0, 9.0, 13.0},
      {"10x+cos(4x)", 12.0, 12.0, 10.0, 14.0},
  };
  for (const auto& row : table) {
    if (row.f != f_id) continue;
    switch (solver) {
      case SolverId::Sparsa: return row.sparsa;
      case SolverId::Fista: return row.fista;
      case SolverId::Fpca: return row.fpca;
      case SolverId::Stela: return row.stela;
    }
  }
  return 0.1;
}

ClassicalConfig default_config(SolverId solver, std::string_view f_id) {
  ClassicalConfig c;
  c.lambda = default_lambda(solver, f_id);
  return c;
}

double bb_step(int t, const Vector& x_t, const Vector& x_prev, const Vector& grad_t, const Vector& grad_prev,
               BbVariant variant) {
  if (t <= 0) return 1.0;
  const Vector delta = x_t - x_prev;
  const Vector g = grad_t - grad_prev;
  const double dg = delta.dot(g);
  double alpha = 1.0;
  switch (variant) {
    case BbVariant::First: alpha = dg / g.squaredNorm(); break;
    case BbVariant::Second: alpha = g.squaredNorm() / dg; break;
    case BbVariant::Classic: alpha = dg / delta.squaredNorm(); break;
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) return 1.0;
  return alpha;
}

double objective(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f, double lambda) {
  return loss(x, problem, f) + lambda * x.lpNorm<1>();
}

namespace {

using Clock = std::chrono::steady_clock;

class Problem {
 public:
  Problem(const ProblemInstance& p, const NonlinearFunction& f) : A_(p.dictionary()), y_(p.y), f_(f) {
    if (p.y.size() != A_.rows()) throw DimensionError("observation length does not match the dictionary");
  }
  double smooth(const Vector& x) const { return 0.5 * (y_ - f_.values(A_ * x)).squaredNorm(); }
  Vector gradient(const Vector& x) const {
    const Vector u = A_ * x;
    return A_.transpose() * f_.derivatives(u).cwiseProduct(f_.values(u) - y_);
  }
  Index n() const { return A_.cols(); }

 private:
  const Matrix& A_;
  const Vector& y_;
  const NonlinearFunction& f_;
};

Vector prox_step(const Vector& from, const Vector& grad, double alpha, double lambda) {
  return (from - grad / alpha).unaryExpr([t = lambda / alpha](double v) { return soft_threshold(v, t); });
}

/// Sliding window of (L, ||x||_1) for the nonmonotone acceptance test; phi is
/// re-evaluated with the current lambda so FPCA's continuation stays consistent.
class History {
 public:
  explicit History(int memory) : capacity_(static_cast<std::size_t>(memory) + 1) {}
  void push(double smooth, double l1) {
    entries_.push_back({smooth, l1});
    if (entries_.size() > capacity_) entries_.pop_front();
  }
  double max_phi(double lambda) const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : entries_) best = std::max(best, e.smooth + lambda * e.l1);
    return best;
  }

 private:
  struct Entry {
    double smooth, l1;
  };
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

bool finite(const Vector& v) { return v.allFinite(); }

SolverTrace start_trace(SolverId id, const ClassicalConfig& c, Index n) {
  c.validate();
  SolverTrace trace;
  trace.solver_id = std::string(solver_name(id));
  trace.hyperparams = {{"lambda", c.lambda},
                       {"eta_factor", c.eta_factor},
                       {"xi", c.xi},
                       {"memory", static_cast<double>(c.memory)},
                       {"max_iterations", static_cast<double>(c.max_iterations)},
                       {"bb_variant", static_cast<double>(c.bb_variant)}};
  if (id == SolverId::Fpca) trace.hyperparams["fpca_gamma0"] = c.fpca_gamma0;
  if (id == SolverId::Stela) trace.hyperparams["stela_beta"] = c.stela_beta;
  if (id == SolverId::Fista)
    trace.hyperparams["fista_backtrack_from_z"] = c.fista_backtrack == FistaBacktrack::FromExtrapolated ? 1.0 : 0.0;
  trace.iterates.reserve(static_cast<std::size_t>(c.max_iterations) + 1);
  trace.iterates.push_back(Vector::Zero(n));
  return trace;
}

void record(SolverTrace& trace, const ClassicalConfig& c, Clock::time_point started, Vector x, StepInfo info) {
  trace.iterates.push_back(std::move(x));
  trace.steps.push_back(info);
  trace.wall_times.push_back(c.record_timing ? std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - started)
                                             : std::chrono::nanoseconds{0});
}

// SpaRSA and FPCA share everything except the continuation rule.
SolverTrace separable_approximation(SolverId id, const ProblemInstance& instance, const NonlinearFunction& f,
                                    const ClassicalConfig& c) {
  const Problem problem(instance, f);
  SolverTrace trace = start_trace(id, c, problem.n());
  const bool continuation = id == SolverId::Fpca;

  double lambda = c.lambda;
  double gamma = c.fpca_gamma0;
  Vector x = Vector::Zero(problem.n());
  Vector x_prev = x;
  Vector g = problem.gradient(x);
  Vector g_prev = g;
  History history(c.memory);
  history.push(problem.smooth(x), 0.0);

  for (int t = 0; t < c.max_iterations; ++t) {
    const auto started = Clock::now();
    StepInfo info;
    info.lambda = lambda;
    if (trace.stalled_at) {
      record(trace, c, started, x, info);
      continue;
    }
    double alpha = bb_step(t, x, x_prev, g, g_prev, c.bb_variant);
    const double reference = history.max_phi(lambda);
    Vector candidate = prox_step(x, g, alpha, lambda);
    double cand_smooth = problem.smooth(candidate);
    while (cand_smooth + lambda * candidate.lpNorm<1>() >
           reference - c.xi * alpha / 2.0 * (candidate - x).squaredNorm()) {
      if (info.backtracks >= c.max_backtracks || !std::isfinite(alpha)) {
        trace.stalled_at = static_cast<std::size_t>(t);
        break;
      }
      alpha *= c.eta_factor;
      candidate = prox_step(x, g, alpha, lambda);
      cand_smooth = problem.smooth(candidate);
      ++info.backtracks;
    }
    if (trace.stalled_at || !finite(candidate)) {
      trace.stalled_at = static_cast<std::size_t>(t);
      record(trace, c, started, x, info);
      continue;
    }
    info.alpha = alpha;
    const double step_norm = (candidate - x).norm();
    x_prev = std::move(x);
    g_prev = std::move(g);
    x = std::move(candidate);
    g = problem.gradient(x);
    history.push(cand_smooth, x.lpNorm<1>());
    if (continuation && step_norm < gamma) {
      lambda *= 0.5;
      gamma *= 0.5;
    }
    record(trace, c, started, x, info);
  }
  return trace;
}

}  // namespace

SolverTrace sparsa_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config) {
  return separable_approximation(SolverId::Sparsa, problem, f, config);
}

SolverTrace fpca_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config) {
  return separable_approximation(SolverId::Fpca, problem, f, config);
}

SolverTrace fista_solve(const ProblemInstance& instance, const NonlinearFunction& f, const ClassicalConfig& c) {
  const Problem problem(instance, f);
  SolverTrace trace = start_trace(SolverId::Fista, c, problem.n());
  const double lambda = c.lambda;

  Vector x = Vector::Zero(problem.n());
  Vector x_prev = x;
  Vector g = problem.gradient(x);
  Vector g_prev = g;
  Vector z = x;
  double k = 1.0;
  History history(c.memory);
  history.push(problem.smooth(x), 0.0);

  for (int t = 0; t < c.max_iterations; ++t) {
    const auto started = Clock::now();
    StepInfo info;
    info.lambda = lambda;
    if (trace.stalled_at) {
      record(trace, c, started, x, info);
      continue;
    }
    double alpha = bb_step(t, x, x_prev, g, g_prev, c.bb_variant);
    const double reference = history.max_phi(lambda);
    const Vector gz = t == 0 ? g : problem.gradient(z);
    Vector candidate = prox_step(z, gz, alpha, lambda);
    double cand_smooth = problem.smooth(candidate);
    while (cand_smooth + lambda * candidate.lpNorm<1>() >
           reference - c.xi * alpha / 2.0 * (candidate - x).squaredNorm()) {
      if (info.backtracks >= c.max_backtracks || !std::isfinite(alpha)) {
        trace.stalled_at = static_cast<std::size_t>(t);
        break;
      }
      alpha *= c.eta_factor;
      candidate = c.fista_backtrack == FistaBacktrack::FromIterate ? prox_step(x, g, alpha, lambda)
                                                                  : prox_step(z, gz, alpha, lambda);
      cand_smooth = problem.smooth(candidate);
      ++info.backtracks;
    }
    if (trace.stalled_at || !finite(candidate)) {
      trace.stalled_at = static_cast<std::size_t>(t);
      record(trace, c, started, x, info);
      continue;
    }
    info.alpha = alpha;
    const double k_next = (1.0 + std::sqrt(1.0 + 4.0 * k * k)) / 2.0;
    z = candidate + ((k - 1.0) / k_next) * (candidate - x);
    k = k_next;
    x_prev = std::move(x);
    g_prev = std::move(g);
    x = std::move(candidate);
    g = problem.gradient(x);
    history.push(cand_smooth, x.lpNorm<1>());
    record(trace, c, started, x, info);
  }
  trace.hyperparams["final_momentum_k"] = k;
  return trace;
}

SolverTrace stela_solve(const ProblemInstance& instance, const NonlinearFunction& f, const ClassicalConfig& c) {
  const Problem problem(instance, f);
  SolverTrace trace = start_trace(SolverId::Stela, c, problem.n());
  const double lambda = c.lambda;

  Vector x = Vector::Zero(problem.n());
  Vector x_prev = x;
  Vector g = problem.gradient(x);
  Vector g_prev = g;
  double x_smooth = problem.smooth(x);

  for (int t = 0; t < c.max_iterations; ++t) {
    const auto started = Clock::now();
    StepInfo info;
    info.lambda = lambda;
    if (trace.stalled_at) {
      record(trace, c, started, x, info);
      continue;
    }
    const double alpha = bb_step(t, x, x_prev, g, g_prev, c.bb_variant);
    info.alpha = alpha;
    const Vector direction = prox_step(x, g, alpha, lambda) - x;
    const double l1_x = x.lpNorm<1>();
    const double l1_dir = (x + direction).lpNorm<1>();
    const double phi_x = x_smooth + lambda * l1_x;
    const double descent = g.dot(direction) + lambda * (l1_dir - l1_x);

    double gamma = 1.0;
    Vector candidate = x + direction;
    double cand_smooth = problem.smooth(candidate);
    while (cand_smooth + lambda * ((1.0 - gamma) * l1_x + gamma * l1_dir) > phi_x + c.xi * gamma * descent) {
      if (info.backtracks >= c.max_backtracks) {
        trace.stalled_at = static_cast<std::size_t>(t);
        break;
      }
      gamma *= c.stela_beta;
      candidate = x + gamma * direction;
      cand_smooth = problem.smooth(candidate);
      ++info.backtracks;
    }
    if (trace.stalled_at || !finite(candidate)) {
      trace.stalled_at = static_cast<std::size_t>(t);
      record(trace, c, started, x, info);
      continue;
    }
    info.step_length = gamma;
    x_prev = std::move(x);
    g_prev = std::move(g);
    x = std::move(candidate);
    x_smooth = cand_smooth;
    g = problem.gradient(x);
    record(trace, c, started, x, info);
  }
  return trace;
}

SolverTrace solve(SolverId solver, const ProblemInstance& problem, const NonlinearFunction& f,
                  const ClassicalConfig& config) {
  switch (solver) {
    case SolverId::Sparsa: return sparsa_solve(problem, f, config);
    case SolverId::Fista: return fista_solve(problem, f, config);
    case SolverId::Fpca: return fpca_solve(problem, f, config);
    case SolverId::Stela: return stela_solve(problem, f, config);
  }
  throw std::logic_error("unhandled solver id");
}

std::vector<SolverTrace> solve_batch(SolverId solver, const InstanceSet& set, const NonlinearFunction& f,
                                     const ClassicalConfig& config) {
  config.validate();
  std::vector<SolverTrace> traces(static_cast<std::size_t>(set.size()));
#pragma omp parallel for schedule(dynamic, 4)
  for (Index j = 0; j < set.size(); ++j) traces[static_cast<std::size_t>(j)] = solve(solver, set.instance(j), f, config);
  return traces;
}

std::vector<SolverTrace> solve_batch_serial(SolverId solver, const InstanceSet& set, const NonlinearFunction& f,
                                            const ClassicalConfig& config) {
  std::vector<SolverTrace> traces;
  traces.reserve(static_cast<std::size_t>(set.size()));
  for (Index j = 0; j < set.size(); ++j) traces.push_back(solve(solver, set.instance(j), f, config));
  return traces;
}

std::vector<double> nmse_curve(const std::vector<SolverTrace>& traces, const Matrix& truths) {
  if (traces.empty()) throw DimensionError("nmse_curve: no traces");
  if (static_cast<Index>(traces.size()) != truths.cols()) throw DimensionError("nmse_curve: trace/truth count mismatch");
  const std::size_t steps = traces.front().iterates.size();
  std::vector<double> curve;
  Matrix estimates(truths.rows(), truths.cols());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < traces.size(); ++j) {
      if (traces[j].iterates.size() != steps) throw DimensionError("nmse_curve: traces differ in length");
      estimates.col(static_cast<Index>(j)) = traces[j].iterates[t];
    }
    curve.push_back(nmse_db(estimates, truths));
  }
  return curve;
}

}  // namespace nlreg

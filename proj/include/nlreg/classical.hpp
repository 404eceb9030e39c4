#pragma once

#include "nlreg/core.hpp"
#include "nlreg/datagen.hpp"

#include <string_view>
#include <vector>

namespace nlreg {

enum class SolverId { Sparsa, Fista, Fpca, Stela };

std::string_view solver_name(SolverId id);
/// Throws std::invalid_argument for anything other than sparsa, fista, fpca, stela.
SolverId parse_solver(std::string_view name);

/// Barzilai-Borwein quotients with d = x_t - x_prev, g = grad_t - grad_prev:
///   first = d'g / g'g, second = g'g / d'g (both as printed in the baseline
///   pseudocode), classic = d'g / d'd (the SpaRSA curvature estimate).
enum class BbVariant { First, Second, Classic };

std::string_view bb_variant_name(BbVariant v);
BbVariant parse_bb_variant(std::string_view name);

/// Where FISTA's backtracking loop recomputes its candidate from. The published
/// pseudocode restarts from the last iterate x; the extrapolated point z is the
/// textbook choice.
enum class FistaBacktrack { FromIterate, FromExtrapolated };

struct ClassicalConfig {
  double lambda = 0.5;
  double eta_factor = 2.0;  // alpha multiplier in the line search
  double xi = 1e-5;         // sufficient-decrease constant
  int memory = 0;           // nonmonotone window M
  int max_iterations = 16;
  double fpca_gamma0 = 1e-2;
  double stela_beta = 0.5;
  BbVariant bb_variant = BbVariant::Classic;
  FistaBacktrack fista_backtrack = FistaBacktrack::FromExtrapolated;
  long max_backtracks = 1'000'000;
  bool record_timing = true;

  void validate() const;
};

/// Per-(solver, function) l1 weights from the baseline tables. The 10x+cos(kx)
/// family has no published FISTA value; SpaRSA's is used instead. The identity
/// has none either and defaults to 0.1.
double default_lambda(SolverId solver, std::string_view f_id);
ClassicalConfig default_config(SolverId solver, std::string_view f_id);

/// BB curvature estimate. 1 at t = 0 and whenever the quotient is not a
/// positive finite number.
double bb_step(int t, const Vector& x_t, const Vector& x_prev, const Vector& grad_t, const Vector& grad_prev,
               BbVariant variant = BbVariant::Classic);

/// phi(x) = L(x) + lambda ||x||_1
double objective(const Vector& x, const ProblemInstance& problem, const NonlinearFunction& f, double lambda);

SolverTrace sparsa_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config);
SolverTrace fista_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config);
SolverTrace fpca_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config);
SolverTrace stela_solve(const ProblemInstance& problem, const NonlinearFunction& f, const ClassicalConfig& config);

SolverTrace solve(SolverId solver, const ProblemInstance& problem, const NonlinearFunction& f,
                  const ClassicalConfig& config);

/// One trace per sample, in sample order. The parallel map and the serial loop
/// produce bit-identical traces (timings aside).
std::vector<SolverTrace> solve_batch(SolverId solver, const InstanceSet& set, const NonlinearFunction& f,
                                     const ClassicalConfig& config);
std::vector<SolverTrace> solve_batch_serial(SolverId solver, const InstanceSet& set, const NonlinearFunction& f,
                                            const ClassicalConfig& config);

/// NMSE in dB after each iteration t = 0..T across a batch of traces.
std::vector<double> nmse_curve(const std::vector<SolverTrace>& traces, const Matrix& truths);

}  // namespace nlreg

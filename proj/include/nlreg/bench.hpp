#pragma once

#include "nlreg/classical.hpp"
#include "nlreg/datagen.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlreg {

/// One comparison: a fixed test set drawn from (seed, f, SNR, condition
/// number) and a list of solvers evaluated on it. Solver ids are the classical
/// ones plus "nlista" and "lista" (learned, read from checkpoints).
struct ExperimentSpec {
  std::string name;
  std::string f_id = "2x+cos(x)";
  std::optional<double> snr_db;
  std::optional<double> cond_number;
  std::vector<std::string> solvers{"sparsa", "fista", "fpca", "stela", "lista", "nlista"};
  int T = 16;
  Index test_size = 1000;
  Index m = 250;
  Index n = 500;
  double nonzero_prob = 0.1;
  std::uint64_t seed = 2021;
  /// Training seeds of the learned solvers; results are averaged over them.
  std::vector<std::uint64_t> train_seeds{0};
  std::map<std::string, double> lambda_overrides;

  GenerationConfig generation() const;
  void validate() const;
};

bool is_learned_solver(const std::string& id);

/// Shipped specs: fig2a, fig2b, fig2c, and table1 (three rows). Throws
/// std::invalid_argument for other names.
std::vector<ExperimentSpec> canonical_specs(const std::string& name);
std::vector<std::string> canonical_spec_names();

/// Checkpoint location of a learned solver for a spec and training seed.
std::filesystem::path checkpoint_stem(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                      const std::string& solver, std::uint64_t train_seed);
/// The `nlreg train` command line that produces that checkpoint.
std::string train_command(const std::filesystem::path& dir, const ExperimentSpec& spec, const std::string& solver,
                          std::uint64_t train_seed);

struct SolverCurve {
  std::string solver;
  std::vector<double> nmse_db;  // t = 0 .. T
};

struct ExperimentResults {
  ExperimentSpec spec;
  std::vector<SolverCurve> curves;
};

/// Evaluates every solver on the same test instances. Learned solvers need
/// their checkpoints under `checkpoint_dir`; a missing one raises
/// MissingCheckpointError naming the train command.
ExperimentResults run_experiment(const ExperimentSpec& spec, const std::filesystem::path& checkpoint_dir);

/// Long format: experiment,solver,t,nmse_db
void write_results_csv(const std::vector<ExperimentResults>& results, const std::filesystem::path& path);
/// experiment,solver,final_nmse_db
void write_summary_csv(const std::vector<ExperimentResults>& results, const std::filesystem::path& path);

enum class PlotStyle { PerIterationCurves, FinalBar };
/// per_iteration_curves: solver,t,nmse_db. final_bar: solver,nmse_db.
/// Throws std::invalid_argument when there is nothing to plot.
void emit_plot_data(const ExperimentResults& results, PlotStyle style, const std::filesystem::path& path);

}  // namespace nlreg

#include "nlreg/bench.hpp"
#include "nlreg/checkpoint.hpp"
#include "nlreg/container.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"
#include "nlreg/nlista.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nlreg {

GenerationConfig ExperimentSpec::generation() const {
  GenerationConfig g;
  g.m = m;
  g.n = n;
  g.nonzero_prob = nonzero_prob;
  g.snr_db = snr_db;
  g.cond_number = cond_number;
  g.seed = seed;
  g.batch = test_size;
  return g;
}

bool is_learned_solver(const std::string& id) { return id == "nlista" || id == "lista"; }

void ExperimentSpec::validate() const {
  generation().validate();
  get_function(f_id);
  if (T <= 0) throw std::invalid_argument("T must be positive");
  if (test_size <= 0) throw std::invalid_argument("test_size must be positive");
  if (solvers.empty()) throw std::invalid_argument("experiment '" + name + "' lists no solvers");
  if (train_seeds.empty()) throw std::invalid_argument("at least one training seed is required");
  for (const auto& s : solvers)
    if (!is_learned_solver(s)) parse_solver(s);
  for (const auto& [s, lambda] : lambda_overrides) {
    parse_solver(s);
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda override for " + s + " must be positive");
  }
}

std::vector<std::string> canonical_spec_names() { return {"fig2a", "fig2b", "fig2c", "table1"}; }

std::vector<ExperimentSpec> canonical_specs(const std::string& name) {
  ExperimentSpec base;
  base.name = name;
  if (name == "fig2a") return {base};
  if (name == "fig2b") {
    base.snr_db = 30.0;
    return {base};
  }
  if (name == "fig2c") {
    base.cond_number = 50.0;
    return {base};
  }
  if (name == "table1") {
    std::vector<ExperimentSpec> rows;
    for (int k : {2, 3, 4}) {
      ExperimentSpec row = base;
      row.name = "table1-cos" + std::to_string(k) + "x";
      row.f_id = "10x+cos(" + std::to_string(k) + "x)";
      rows.push_back(row);
    }
    return rows;
  }
  throw std::invalid_argument("unknown experiment spec '" + name + "' (expected fig2a, fig2b, fig2c or table1)");
}

namespace {

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out += c;
  return out;
}

std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

}  // namespace

std::filesystem::path checkpoint_stem(const std::filesystem::path& dir, const ExperimentSpec& spec,
                                      const std::string& solver, std::uint64_t train_seed) {
  std::ostringstream name;
  name << solver << '_' << slug(spec.f_id) << '_';
  if (spec.snr_db)
    name << "snr" << io::format_real(*spec.snr_db);
  else
    name << "noiseless";
  if (spec.cond_number) name << "_cond" << io::format_real(*spec.cond_number);
  name << "_m" << spec.m << "_n" << spec.n << "_p" << io::format_real(spec.nonzero_prob) << "_T" << spec.T << "_s"
       << spec.seed << "_r" << train_seed;
  return dir / name.str();
}

std::string train_command(const std::filesystem::path& dir, const ExperimentSpec& spec, const std::string& solver,
                          std::uint64_t train_seed) {
  std::ostringstream cmd;
  cmd << "nlreg train --f " << shell_quote(spec.f_id) << " --m " << spec.m << " --n " << spec.n << " --p "
      << io::format_real(spec.nonzero_prob) << " --layers " << spec.T << " --seed " << spec.seed << " --train-seed "
      << train_seed;
  if (spec.snr_db) cmd << " --snr-db " << io::format_real(*spec.snr_db);
  if (spec.cond_number) cmd << " --cond " << io::format_real(*spec.cond_number);
  if (solver == "lista") cmd << " --lista";
  cmd << " --checkpoint " << shell_quote(checkpoint_stem(dir, spec, solver, train_seed).string());
  return cmd.str();
}

ExperimentResults run_experiment(const ExperimentSpec& spec, const std::filesystem::path& checkpoint_dir) {
  spec.validate();
  const NonlinearFunction& f = get_function(spec.f_id);
  const GenerationConfig gen = spec.generation();

  // Fail before any solver work when a checkpoint is missing.
  for (const auto& solver : spec.solvers) {
    if (!is_learned_solver(solver)) continue;
    for (auto seed : spec.train_seeds) {
      const auto stem = checkpoint_stem(checkpoint_dir, spec, solver, seed);
      if (!std::filesystem::exists(stem.string() + ".bin"))
        throw MissingCheckpointError("missing " + solver + " checkpoint '" + stem.string() +
                                     "'; train it with:\n  " + train_command(checkpoint_dir, spec, solver, seed));
    }
  }

  const Dictionary dict = generate_dictionary(gen);
  const InstanceSet test = generate_set(gen, f, dict, SampleSet::Test, 0, spec.test_size);

  ExperimentResults results{spec, {}};
  for (const auto& solver : spec.solvers) {
    SolverCurve curve{solver, {}};
    if (is_learned_solver(solver)) {
      curve.nmse_db.assign(static_cast<std::size_t>(spec.T) + 1, 0.0);
      for (auto seed : spec.train_seeds) {
        const auto loaded = load_checkpoint(checkpoint_stem(checkpoint_dir, spec, solver, seed), dict.A);
        const NlistaModel& model = loaded.model;
        if (model.depth() < spec.T || model.completed_stages < spec.T)
          throw MissingCheckpointError("checkpoint for " + solver + " has only " +
                                       std::to_string(model.completed_stages) + " trained layers; resume with:\n  " +
                                       train_command(checkpoint_dir, spec, solver, seed));
        curve.nmse_db[0] += nmse_db(Matrix::Zero(spec.n, spec.test_size), test.x_star);
        const auto outputs = forward_batch_iterates(model, test.y, spec.T);
        for (std::size_t t = 0; t < outputs.size(); ++t) curve.nmse_db[t + 1] += nmse_db(outputs[t], test.x_star);
      }
      for (auto& v : curve.nmse_db) v /= static_cast<double>(spec.train_seeds.size());
    } else {
      const SolverId id = parse_solver(solver);
      ClassicalConfig config = default_config(id, spec.f_id);
      if (auto it = spec.lambda_overrides.find(solver); it != spec.lambda_overrides.end()) config.lambda = it->second;
      config.max_iterations = spec.T;
      config.record_timing = false;
      curve.nmse_db = nmse_curve(solve_batch(id, test, f, config), test.x_star);
    }
    results.curves.push_back(std::move(curve));
  }
  return results;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_results_csv(const std::vector<ExperimentResults>& results, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "experiment,solver,t,nmse_db\n";
  for (const auto& r : results)
    for (const auto& c : r.curves)
      for (std::size_t t = 0; t < c.nmse_db.size(); ++t)
        out << r.spec.name << ',' << c.solver << ',' << t << ',' << format_db(c.nmse_db[t]) << '\n';
}

void write_summary_csv(const std::vector<ExperimentResults>& results, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "experiment,solver,final_nmse_db\n";
  for (const auto& r : results)
    for (const auto& c : r.curves) out << r.spec.name << ',' << c.solver << ',' << format_db(c.nmse_db.back()) << '\n';
}

void emit_plot_data(const ExperimentResults& results, PlotStyle style, const std::filesystem::path& path) {
  if (results.curves.empty()) throw std::invalid_argument("no solver results to plot");
  auto out = open_csv(path);
  if (style == PlotStyle::PerIterationCurves) {
    out << "solver,t,nmse_db\n";
    for (const auto& c : results.curves)
      for (std::size_t t = 0; t < c.nmse_db.size(); ++t) out << c.solver << ',' << t << ',' << format_db(c.nmse_db[t]) << '\n';
  } else {
    out << "solver,nmse_db\n";
    for (const auto& c : results.curves) out << c.solver << ',' << format_db(c.nmse_db.back()) << '\n';
  }
}

}  // namespace nlreg

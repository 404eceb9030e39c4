#include "nlreg/cli.hpp"
#include "nlreg/bench.hpp"
#include "nlreg/checkpoint.hpp"
#include "nlreg/classical.hpp"
#include "nlreg/container.hpp"
#include "nlreg/datagen.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"
#include "nlreg/theory.hpp"
#include "nlreg/train.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#ifndef NLREG_VERSION
#define NLREG_VERSION "0.0.0"
#endif

namespace nlreg {

namespace fs = std::filesystem;

namespace {

enum class LogLevel { Quiet, Info, Debug };

// Every flag of every subcommand. One instance per parse; the parse is redone
// from scratch when a config file is merged in.
struct Options {
  std::string config;
  std::string out = ".";
  std::string log_level = "info";

  // data
  std::string f = "2x+cos(x)";
  Index m = 250;
  Index n = 500;
  double p = 0.1;
  std::optional<double> snr_db;
  std::optional<double> cond;
  std::uint64_t seed = 2021;

  // generate
  Index count = 1000;
  std::string set = "test";
  std::uint64_t first_index = 0;

  // solve
  std::string instances;
  std::string solver = "sparsa";
  std::optional<double> lambda;
  int iterations = 16;
  std::string bb_variant = "classic";
  std::string fista_backtrack = "extrapolated";
  bool timing = false;

  // train
  std::string checkpoint;
  int layers = 16;
  bool lista = false;
  std::uint64_t train_seed = 0;
  Index batch_size = 64;
  std::vector<double> lr{1e-3, 1e-4, 2e-5};
  long patience = 4000;
  long max_steps = 200000;
  Index val_size = 1000;
  long val_every = 100;
  int frozen_after = 11;
  std::string gamma_grad = "exact";
  std::optional<double> init_beta;
  double init_theta = 0.0;
  int stop_after_stage = -1;

  // certify
  Index s = 2;
  int T = 20;
  std::uint64_t index = 0;

  // bench
  std::string spec;
  std::string checkpoint_dir = "checkpoints";
  std::vector<std::string> solvers;
  std::optional<Index> test_size;
  std::optional<int> bench_T;
  std::vector<std::string> lambda_overrides;
  std::vector<std::uint64_t> train_seeds;
};

struct Parsed {
  std::unique_ptr<CLI::App> app;
  CLI::App* sub = nullptr;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "Key=value config file; command-line flags take precedence")
      ->configurable(false)
      ->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Output directory (created if absent)")->capture_default_str();
  sub->add_option("--log-level", o.log_level, "quiet, info or debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}))
      ->capture_default_str();
}

void add_data(CLI::App* sub, Options& o) {
  sub->add_option("--f", o.f, "Nonlinearity id")->capture_default_str();
  sub->add_option("--m", o.m, "Observation dimension")->capture_default_str();
  sub->add_option("--n", o.n, "Signal dimension")->capture_default_str();
  sub->add_option("--p", o.p, "Probability of a nonzero signal entry")->capture_default_str();
  sub->add_option("--snr-db", o.snr_db, "Signal-to-noise ratio in dB (noiseless when absent)");
  sub->add_option("--cond", o.cond, "Target condition number of the dictionary");
  sub->add_option("--seed", o.seed, "Generation seed")->capture_default_str();
}

// With `strict` off, required options may be missing; a config file can still
// supply them.
Parsed build(Options& o, bool strict) {
  Parsed p;
  p.app = std::make_unique<CLI::App>("Sparse nonlinear regression: classical solvers, NLISTA, certificates", "nlreg");
  CLI::App& app = *p.app;
  app.set_version_flag("--version", NLREG_VERSION);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a set of problem instances");
  add_common(gen, o);
  add_data(gen, o);
  gen->add_option("--count", o.count, "Number of samples")->capture_default_str();
  gen->add_option("--set", o.set, "Sample stream: test, train, validation or adhoc")->capture_default_str();
  gen->add_option("--first-index", o.first_index, "Index of the first sample in the stream")->capture_default_str();

  auto* solve = app.add_subcommand("solve", "Run a classical solver on stored instances");
  add_common(solve, o);
  solve->add_option("--instances", o.instances, "Instance stem written by generate")->required(strict);
  solve->add_option("--solver", o.solver, "sparsa, fista, fpca or stela")->capture_default_str();
  solve->add_option("--lambda", o.lambda, "l1 weight (default: per-function table)");
  solve->add_option("--iterations", o.iterations, "Iteration count")->capture_default_str();
  solve->add_option("--bb-variant", o.bb_variant, "first, second or classic")->capture_default_str();
  solve->add_option("--fista-backtrack", o.fista_backtrack, "iterate or extrapolated")->capture_default_str();
  solve->add_flag("--timing", o.timing, "Record wall-clock times (makes the trace nondeterministic)");

  auto* train = app.add_subcommand("train", "Progressively train NLISTA (or the LISTA baseline)");
  add_common(train, o);
  add_data(train, o);
  train->add_option("--checkpoint", o.checkpoint, "Checkpoint stem; an existing one is resumed")->required(strict);
  train->add_option("--layers", o.layers, "Number of layers")->capture_default_str();
  train->add_flag("--lista", o.lista, "Train the LISTA baseline (identity inside the update)");
  train->add_option("--train-seed", o.train_seed, "Training run; selects the training sample streams")
      ->capture_default_str();
  train->add_option("--batch-size", o.batch_size)->capture_default_str();
  train->add_option("--lr", o.lr, "Learning-rate schedule")->capture_default_str();
  train->add_option("--patience", o.patience, "Steps without validation improvement before an lr drop")
      ->capture_default_str();
  train->add_option("--max-steps", o.max_steps, "Step cap per stage")->capture_default_str();
  train->add_option("--val-size", o.val_size)->capture_default_str();
  train->add_option("--val-every", o.val_every)->capture_default_str();
  train->add_option("--frozen-after", o.frozen_after, "Stages beyond this freeze the first layers")
      ->capture_default_str();
  train->add_option("--gamma-grad", o.gamma_grad, "exact or stop")
      ->check(CLI::IsMember({"exact", "stop"}))
      ->capture_default_str();
  train->add_option("--init-beta", o.init_beta, "Stage-1 beta (default 1/sup|f'|^2)");
  train->add_option("--init-theta", o.init_theta, "Stage-1 threshold")->capture_default_str();
  train->add_option("--stop-after-stage", o.stop_after_stage, "Stop after this stage (-1: train all)")
      ->capture_default_str();

  auto* certify = app.add_subcommand("certify", "Run the oracle NLISTA recurrence and check the convergence bound");
  add_common(certify, o);
  add_data(certify, o);
  certify->add_option("--s", o.s, "Support size of x*")->capture_default_str();
  certify->add_option("--T", o.T, "Number of steps")->capture_default_str();
  certify->add_option("--index", o.index, "Sample index in the ad-hoc stream")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Run an experiment spec and write NMSE curves");
  add_common(bench, o);
  bench->add_option("--spec", o.spec, "fig2a, fig2b, fig2c or table1")->required(strict);
  bench->add_option("--checkpoint-dir", o.checkpoint_dir, "Where learned-solver checkpoints live")
      ->capture_default_str();
  bench->add_option("--solver", o.solvers, "Restrict to these solvers");
  bench->add_option("--test-size", o.test_size);
  bench->add_option("--T", o.bench_T, "Iterations / layers");
  bench->add_option("--m", o.m, "Observation dimension")->capture_default_str();
  bench->add_option("--n", o.n, "Signal dimension")->capture_default_str();
  bench->add_option("--seed", o.seed, "Generation seed")->capture_default_str();
  bench->add_option("--lambda", o.lambda_overrides, "Per-solver l1 weight, e.g. sparsa=0.4");
  bench->add_option("--train-seeds", o.train_seeds, "Training runs to average");
  return p;
}

// CLI11 does not read a config file given to a subcommand, so the file's
// entries are appended as flags for every option the command line left unset.
std::vector<std::string> merge_config(const Parsed& parsed, const std::string& path,
                                      std::vector<std::string> args) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::ParseError& e) {
    throw FormatError("malformed config file '" + path + "': " + e.what());
  }
  for (const auto& item : items) {
    if (item.name.empty() || item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && item.parents.front() != parsed.sub->get_name()) continue;
    const CLI::Option* opt = parsed.sub->get_option_no_throw("--" + item.name);
    if (!opt || !opt->get_configurable())
      throw FormatError("config file '" + path + "' sets unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    if (item.inputs.empty() || (item.inputs.size() == 1 && item.inputs.front().empty())) continue;
    if (opt->get_expected_max() == 0) {
      args.push_back("--" + item.name + "=" + item.inputs.front());
    } else {
      args.push_back("--" + item.name);
      args.insert(args.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  return args;
}

LogLevel log_level(const Options& o) {
  if (o.log_level == "quiet") return LogLevel::Quiet;
  if (o.log_level == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

GenerationConfig generation(const Options& o) {
  GenerationConfig g;
  g.m = o.m;
  g.n = o.n;
  g.nonzero_prob = o.p;
  g.snr_db = o.snr_db;
  g.cond_number = o.cond;
  g.seed = o.seed;
  return g;
}

void write_manifest(const Parsed& parsed, const fs::path& out) {
  {
    std::ofstream ini(out / "manifest.ini", std::ios::trunc);
    ini << "# " << parsed.sub->get_name() << " -- rerun with: nlreg " << parsed.sub->get_name()
        << " --config manifest.ini\n";
    ini << parsed.sub->config_to_str(true, false);
  }
  nlohmann::json options = nlohmann::json::object();
  for (const CLI::Option* opt : parsed.sub->get_options()) {
    if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0)
      options[name] = opt->results();
    else
      options[name] = opt->get_default_str();
  }
  const char* threads = std::getenv("NLREG_THREADS");
  nlohmann::json manifest = {{"command", parsed.sub->get_name()},
                             {"options", options},
                             {"nlreg_version", NLREG_VERSION},
                             {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                   std::to_string(EIGEN_MINOR_VERSION)},
                             {"compiler", __VERSION__},
                             {"nlreg_threads", threads ? threads : ""}};
  io::write_json(out / "manifest.json", manifest);
}

int cmd_generate(const Options& o, const fs::path& out) {
  const NonlinearFunction& f = get_function(o.f);
  GenerationConfig g = generation(o);
  g.batch = o.count;
  const Dictionary dict = generate_dictionary(g);
  const InstanceSet set = generate_set(g, f, dict, parse_sample_set(o.set), o.first_index, o.count);
  save_instance_set(set, out / "instances");
  std::ofstream csv(out / "instances_summary.csv", std::ios::trunc);
  csv << "sample,support_size,signal_l2,signal_linf,noise_l1,y_l2\n";
  for (Index j = 0; j < set.size(); ++j)
    csv << j << ',' << (set.x_star.col(j).array() != 0.0).count() << ',' << io::format_real(set.x_star.col(j).norm())
        << ',' << io::format_real(set.x_star.col(j).lpNorm<Eigen::Infinity>()) << ','
        << io::format_real(set.epsilon.col(j).lpNorm<1>()) << ',' << io::format_real(set.y.col(j).norm()) << '\n';
  return 0;
}

int cmd_solve(const Options& o, const fs::path& out) {
  const InstanceSet set = load_instance_set(o.instances);
  const NonlinearFunction& f = get_function(set.f_id);
  const SolverId id = parse_solver(o.solver);
  ClassicalConfig config = default_config(id, set.f_id);
  if (o.lambda) config.lambda = *o.lambda;
  config.max_iterations = o.iterations;
  config.bb_variant = parse_bb_variant(o.bb_variant);
  if (o.fista_backtrack == "iterate")
    config.fista_backtrack = FistaBacktrack::FromIterate;
  else if (o.fista_backtrack == "extrapolated")
    config.fista_backtrack = FistaBacktrack::FromExtrapolated;
  else
    throw std::invalid_argument("--fista-backtrack must be iterate or extrapolated");
  config.record_timing = o.timing;
  const auto traces = solve_batch(id, set, f, config);

  const auto curve = nmse_curve(traces, set.x_star);
  std::ofstream nmse(out / "nmse.csv", std::ios::trunc);
  nmse << "solver,t,nmse_db\n";
  for (std::size_t t = 0; t < curve.size(); ++t) nmse << o.solver << ',' << t << ',' << format_db(curve[t]) << '\n';

  std::ofstream trace(out / "trace.csv", std::ios::trunc);
  trace << "sample,t,alpha,lambda,step_length,backtracks,err_l2,objective,wall_ms\n";
  for (std::size_t j = 0; j < traces.size(); ++j) {
    const auto& tr = traces[j];
    const ProblemInstance inst = set.instance(static_cast<Index>(j));
    for (std::size_t t = 1; t < tr.iterates.size(); ++t) {
      const StepInfo& st = tr.steps[t - 1];
      trace << j << ',' << t << ',' << io::format_real(st.alpha) << ',' << io::format_real(st.lambda) << ','
            << io::format_real(st.step_length) << ',' << st.backtracks << ','
            << io::format_real((tr.iterates[t] - inst.x_star).norm()) << ','
            << io::format_real(objective(tr.iterates[t], inst, f, st.lambda)) << ',';
      if (o.timing)
        trace << io::format_real(std::chrono::duration<double, std::milli>(tr.wall_times[t - 1]).count());
      else
        trace << "NA";
      trace << '\n';
    }
  }
  std::size_t stalled = 0;
  for (const auto& tr : traces) stalled += tr.stalled_at.has_value();
  if (stalled > 0) std::cerr << "warning: line search found no acceptable step on " << stalled
              << " sample(s); their iterates are held from that point\n";
  return 0;
}

int cmd_train(const Options& o, const fs::path& out, LogLevel level) {
  GenerationConfig g = generation(o);
  const Dictionary dict = generate_dictionary(g);
  GenerationConfig data = g;
  data.seed = training_data_seed(o.seed, o.train_seed);

  TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.lr_schedule = o.lr;
  tc.patience = o.patience;
  tc.max_steps_per_stage = o.max_steps;
  tc.val_size = o.val_size;
  tc.val_every = o.val_every;
  tc.frozen_prefix_after = o.frozen_after;
  tc.gamma_gradient = o.gamma_grad == "stop" ? GammaGradient::StopGradient : GammaGradient::Exact;
  tc.init_beta = o.init_beta;
  tc.init_theta = o.init_theta;
  tc.stop_after_stage = o.stop_after_stage;
  tc.validate();

  const nlohmann::json settings = {
      {"seed", o.seed},           {"train_seed", o.train_seed}, {"p", o.p},
      {"snr_db", o.snr_db ? nlohmann::json(*o.snr_db) : nlohmann::json(nullptr)},
      {"cond", o.cond ? nlohmann::json(*o.cond) : nlohmann::json(nullptr)},
      {"batch_size", o.batch_size}, {"lr", o.lr},                 {"patience", o.patience},
      {"max_steps", o.max_steps},   {"val_size", o.val_size},     {"val_every", o.val_every},
      {"frozen_after", o.frozen_after}, {"gamma_grad", o.gamma_grad},
      {"init_beta", o.init_beta ? nlohmann::json(*o.init_beta) : nlohmann::json(nullptr)},
      {"init_theta", o.init_theta}};

  NlistaModel model;
  const fs::path stem = o.checkpoint;
  if (fs::exists(stem.string() + ".bin")) {
    auto loaded = load_checkpoint(stem, dict.A);
    for (const char* key : {"seed", "train_seed", "p", "snr_db", "cond", "batch_size", "lr", "patience", "max_steps",
                            "val_size", "val_every", "frozen_after", "gamma_grad", "init_beta", "init_theta"})
      if (!loaded.meta.contains(key) || loaded.meta.at(key) != settings.at(key))
        throw std::invalid_argument(std::string("checkpoint was written with a different '") + key +
                                    "'; use a new --checkpoint path");
    if (loaded.model.f_id != get_function(o.f).id() || loaded.model.depth() != o.layers ||
        loaded.model.is_lista() != o.lista)
      throw std::invalid_argument("checkpoint does not match --f/--layers/--lista; use a new --checkpoint path");
    model = std::move(loaded.model);
    if (level != LogLevel::Quiet)
      std::cerr << "resuming from " << stem.string() << " after stage " << model.completed_stages << '\n';
  } else {
    model = make_model(dict.A, o.f, o.layers, o.lista);
  }
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  TrainHooks hooks;
  if (level == LogLevel::Debug)
    hooks.on_validation = [](const TrainLogEntry& e) {
      std::cerr << "stage " << e.stage << " step " << e.step << " lr " << e.lr << " val " << e.val_loss << '\n';
    };
  hooks.on_stage_end = [&](const NlistaModel& m) {
    save_checkpoint(m, stem, settings);
    if (level != LogLevel::Quiet) {
      const double val = m.train_log.empty() ? 0.0 : m.train_log.back().val_loss;
      std::cerr << "stage " << m.completed_stages << "/" << m.depth() << " done, last val loss " << val << '\n';
    }
  };
  train_progressive(model, data, dict, tc, hooks);
  if (model.completed_stages == 0) save_checkpoint(model, stem, settings);

  std::ofstream log(out / "train_log.csv", std::ios::trunc);
  log << "stage,step,lr,val_loss\n";
  for (const auto& e : model.train_log)
    log << e.stage << ',' << e.step << ',' << io::format_real(e.lr) << ',' << io::format_real(e.val_loss) << '\n';
  std::ofstream layers(out / "layers.csv", std::ios::trunc);
  layers << "layer,beta,theta,w_frobenius\n";
  for (int t = 0; t < model.depth(); ++t) {
    const auto& L = model.layers[static_cast<std::size_t>(t)];
    layers << t + 1 << ',' << io::format_real(L.beta) << ',' << io::format_real(L.theta) << ','
           << io::format_real(L.W.norm()) << '\n';
  }
  return 0;
}

int cmd_certify(const Options& o, const fs::path& out) {
  const NonlinearFunction& f = get_function(o.f);
  const GenerationConfig g = generation(o);
  const Dictionary dict = generate_dictionary(g);
  const ProblemInstance inst = generate_instance_with_support(g, f, dict.A, o.s, o.index);
  const ConvergenceCertificate cert = certified_run(inst, f, o.T);
  write_certificate_csv(cert, out / "certificate.csv");
  auto summary = certificate_summary(cert);
  summary["f_id"] = f.id();
  summary["T"] = o.T;
  summary["dictionary_coherence"] = dict.coherence;
  io::write_json(out / "certificate.json", summary);
  return 0;
}

int cmd_bench(const Options& o, const fs::path& out) {
  auto specs = canonical_specs(o.spec);
  for (auto& spec : specs) {
    spec.m = o.m;
    spec.n = o.n;
    spec.seed = o.seed;
    if (!o.solvers.empty()) spec.solvers = o.solvers;
    if (o.test_size) spec.test_size = *o.test_size;
    if (o.bench_T) spec.T = *o.bench_T;
    if (!o.train_seeds.empty()) spec.train_seeds = o.train_seeds;
    for (const auto& kv : o.lambda_overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--lambda expects solver=value, got '" + kv + "'");
      spec.lambda_overrides[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    }
  }
  std::vector<ExperimentResults> results;
  for (const auto& spec : specs) {
    results.push_back(run_experiment(spec, o.checkpoint_dir));
    emit_plot_data(results.back(), PlotStyle::PerIterationCurves, out / ("plot_curves_" + spec.name + ".csv"));
    emit_plot_data(results.back(), PlotStyle::FinalBar, out / ("plot_final_" + spec.name + ".csv"));
  }
  write_results_csv(results, out / "results.csv");
  write_summary_csv(results, out / "summary.csv");
  return 0;
}

void apply_thread_cap() {
  const char* env = std::getenv("NLREG_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n <= 0) throw std::invalid_argument("NLREG_THREADS must be a positive integer");
  omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  Options options;
  Parsed parsed = build(options, false);
  // CLI11 consumes a reversed argument vector.
  auto parse = [](Parsed& p, std::vector<std::string> a) {
    std::reverse(a.begin(), a.end());
    p.app->parse(a);
    for (auto* sub : p.app->get_subcommands()) p.sub = sub;
  };
  try {
    if (args.empty()) {
      std::cerr << parsed.app->help();
      return 2;
    }
    parse(parsed, args);
    const auto merged = options.config.empty() ? args : merge_config(parsed, options.config, args);
    options = Options{};
    parsed = build(options, true);
    parse(parsed, merged);
  } catch (const CLI::ParseError& e) {
    const int code = parsed.app->exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    apply_thread_cap();
    const fs::path out = options.out;
    fs::create_directories(out);
    const std::string& name = parsed.sub->get_name();
    int status = 0;
    if (name == "generate") status = cmd_generate(options, out);
    else if (name == "solve") status = cmd_solve(options, out);
    else if (name == "train") status = cmd_train(options, out, log_level(options));
    else if (name == "certify") status = cmd_certify(options, out);
    else if (name == "bench") status = cmd_bench(options, out);
    write_manifest(parsed, out);
    return status;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace nlreg

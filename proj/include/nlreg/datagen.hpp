#pragma once

#include "nlreg/core.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace nlreg {

struct GenerationConfig {
  Index m = 250;
  Index n = 500;
  double nonzero_prob = 0.1;
  std::optional<double> snr_db;       // absent: noiseless
  std::optional<double> cond_number;  // absent: plain Gaussian dictionary
  std::uint64_t seed = 0;
  Index batch = 1;

  /// Throws std::invalid_argument on m >= n, probabilities outside [0,1],
  /// cond_number < 1 and similar.
  void validate() const;
};

/// Independent random streams. Every (seed, role, set, index) tuple has its own
/// generator, so appending samples never perturbs the dictionary or earlier
/// samples, and samples can be drawn in any order or in parallel.
enum class StreamRole : std::uint64_t { Dictionary = 1, Signal = 2, Noise = 3, Support = 4 };
enum class SampleSet : std::uint64_t { Test = 1, Train = 2, Validation = 3, Adhoc = 4 };

const char* sample_set_name(SampleSet s);
/// Throws std::invalid_argument for names other than test, train, validation, adhoc.
SampleSet parse_sample_set(const std::string& name);

/// The engine is fully specified by the standard and the distributions come from
/// Boost (header code), so streams are identical across platforms and standard
/// libraries.
using Rng = std::mt19937_64;
Rng make_stream(std::uint64_t seed, StreamRole role, SampleSet set, std::uint64_t index);

struct Dictionary {
  std::shared_ptr<const Matrix> A;
  std::optional<double> cond_pre_normalization;
  double cond_post_normalization = 0.0;
  double coherence = 0.0;  // max_{i != j} |A_i^T A_j|
  int attempts = 1;
};

/// Gaussian N(0, 1/m) entries, optional singular-value ramp to a target
/// condition number, then unit-norm columns.
Dictionary generate_dictionary(const GenerationConfig& config);

/// Bernoulli(nonzero_prob) support with N(0,1) values.
Vector generate_signal(Index n, double nonzero_prob, Rng& rng);
Vector generate_signal(const GenerationConfig& config);
/// Exactly `support` nonzeros at uniformly chosen positions, N(0,1) values.
Vector generate_signal_with_support(Index n, Index support, Rng& rng);

/// Gaussian noise with variance ||clean||^2 / (m 10^(snr/10)); zeros when
/// snr_db is empty.
Vector generate_noise(const Vector& clean, std::optional<double> snr_db, Rng& rng);

ProblemInstance generate_instance(const GenerationConfig& config, const NonlinearFunction& f,
                                  std::shared_ptr<const Matrix> A, SampleSet set, std::uint64_t index);
/// Ad-hoc sample `index` with exactly `support` nonzeros, as used by the
/// certificate runs.
ProblemInstance generate_instance_with_support(const GenerationConfig& config, const NonlinearFunction& f,
                                               std::shared_ptr<const Matrix> A, Index support, std::uint64_t index);
/// Draws a fresh dictionary and the first ad-hoc sample.
ProblemInstance generate_instance(const GenerationConfig& config, const NonlinearFunction& f);

/// A batch of observations against one shared dictionary; column j of each
/// matrix belongs to sample j.
struct InstanceSet {
  std::shared_ptr<const Matrix> A;
  Matrix x_star;   // n x B
  Matrix epsilon;  // m x B
  Matrix y;        // m x B
  GenerationConfig config;
  std::string f_id;
  SampleSet set = SampleSet::Test;
  std::uint64_t first_index = 0;
  std::optional<double> cond_pre_normalization;
  double cond_post_normalization = 0.0;

  Index size() const { return x_star.cols(); }
  ProblemInstance instance(Index j) const;
};

/// Samples first_index .. first_index+count-1 of the given set. Parallel over
/// samples; bit-identical to generate_set_serial.
InstanceSet generate_set(const GenerationConfig& config, const NonlinearFunction& f, const Dictionary& dict,
                         SampleSet set, std::uint64_t first_index, Index count);
InstanceSet generate_set_serial(const GenerationConfig& config, const NonlinearFunction& f,
                                const Dictionary& dict, SampleSet set, std::uint64_t first_index, Index count);

/// Writes `<stem>.bin` (matrices A, x_star, epsilon, y) and `<stem>.json`.
void save_instance_set(const InstanceSet& set, const std::filesystem::path& stem);
InstanceSet load_instance_set(const std::filesystem::path& stem);

double mutual_coherence(const Matrix& A);
/// Ratio of extreme singular values (of the rank-min(m,n) part).
double condition_number(const Matrix& A);

}  // namespace nlreg

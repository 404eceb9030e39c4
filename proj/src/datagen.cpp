#include "nlreg/datagen.hpp"
#include "nlreg/container.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"

#include <Eigen/SVD>
#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nlreg {

void GenerationConfig::validate() const {
  if (m <= 0 || n <= 0) throw std::invalid_argument("m and n must be positive");
  if (m >= n) throw std::invalid_argument("expected an underdetermined system (m < n)");
  if (!(nonzero_prob >= 0.0 && nonzero_prob <= 1.0))
    throw std::invalid_argument("nonzero_prob must lie in [0, 1]");
  if (cond_number && !(*cond_number >= 1.0)) throw std::invalid_argument("cond_number must be >= 1");
  if (snr_db && !std::isfinite(*snr_db)) throw std::invalid_argument("snr_db must be finite when given");
  if (batch <= 0) throw std::invalid_argument("batch must be positive");
}

namespace {

// SplitMix64 finaliser.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng make_stream(std::uint64_t seed, StreamRole role, SampleSet set, std::uint64_t index) {
  std::uint64_t h = mix(seed);
  h = mix(h ^ static_cast<std::uint64_t>(role));
  h = mix(h ^ static_cast<std::uint64_t>(set));
  h = mix(h ^ index);
  return Rng(h);
}

double mutual_coherence(const Matrix& A) {
  const Matrix gram = A.transpose() * A;
  double mu = 0.0;
  for (Index j = 0; j < gram.cols(); ++j)
    for (Index i = 0; i < gram.rows(); ++i)
      if (i != j) mu = std::max(mu, std::abs(gram(i, j)));
  return mu;
}

double condition_number(const Matrix& A) {
  Eigen::BDCSVD<Matrix> svd(A);
  const auto& s = svd.singularValues();
  return s(0) / s(s.size() - 1);
}

namespace {

Matrix gaussian_matrix(Index m, Index n, Rng& rng) {
  boost::random::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  Matrix A(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) A(i, j) = normal(rng);
  return A;
}

// Replace the singular values by a log-linear ramp from s_max down to s_max/cond.
Matrix impose_condition_number(const Matrix& A, double cond) {
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const Index r = s.size();
  Vector ramp(r);
  for (Index i = 0; i < r; ++i) {
    const double frac = r > 1 ? static_cast<double>(i) / static_cast<double>(r - 1) : 0.0;
    ramp(i) = s(0) * std::pow(cond, -frac);
  }
  return svd.matrixU() * ramp.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

Dictionary generate_dictionary(const GenerationConfig& config) {
  config.validate();
  Dictionary dict;
  for (int attempt = 0;; ++attempt) {
    auto rng = make_stream(config.seed, StreamRole::Dictionary, SampleSet::Adhoc, attempt);
    Matrix A = gaussian_matrix(config.m, config.n, rng);
    if (config.cond_number) {
      A = impose_condition_number(A, *config.cond_number);
      dict.cond_pre_normalization = condition_number(A);
    }
    A.colwise().normalize();
    const double mu = mutual_coherence(A);
    // Parallel columns have probability zero; redraw if it ever happens.
    if (!(mu < 1.0)) {
      if (attempt > 100) throw std::runtime_error("could not draw a dictionary with coherence < 1");
      continue;
    }
    dict.coherence = mu;
    dict.cond_post_normalization = condition_number(A);
    dict.attempts = attempt + 1;
    dict.A = std::make_shared<const Matrix>(std::move(A));
    return dict;
  }
}

Vector generate_signal(Index n, double nonzero_prob, Rng& rng) {
  boost::random::bernoulli_distribution<double> active(nonzero_prob);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  Vector x = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (active(rng)) x(i) = normal(rng);
  return x;
}

Vector generate_signal(const GenerationConfig& config) {
  config.validate();
  auto rng = make_stream(config.seed, StreamRole::Signal, SampleSet::Adhoc, 0);
  return generate_signal(config.n, config.nonzero_prob, rng);
}

Vector generate_signal_with_support(Index n, Index support, Rng& rng) {
  if (support < 0 || support > n) throw std::invalid_argument("support size out of range");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  // Partial Fisher-Yates: the first `support` slots are a uniform subset.
  for (Index i = 0; i < support; ++i) {
    boost::random::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  Vector x = Vector::Zero(n);
  for (Index i = 0; i < support; ++i) {
    double v = 0.0;
    while (v == 0.0) v = normal(rng);
    x(idx[static_cast<std::size_t>(i)]) = v;
  }
  return x;
}

Vector generate_noise(const Vector& clean, std::optional<double> snr_db, Rng& rng) {
  const Index m = clean.size();
  if (!snr_db) return Vector::Zero(m);
  const double variance = clean.squaredNorm() / (static_cast<double>(m) * std::pow(10.0, *snr_db / 10.0));
  boost::random::normal_distribution<double> normal(0.0, std::sqrt(variance));
  Vector eps(m);
  for (Index i = 0; i < m; ++i) eps(i) = normal(rng);
  return eps;
}

namespace {

struct Sample {
  Vector x_star, epsilon, y;
};

Sample draw_sample(const GenerationConfig& config, const NonlinearFunction& f, const Matrix& A, SampleSet set,
                   std::uint64_t index) {
  auto signal_rng = make_stream(config.seed, StreamRole::Signal, set, index);
  Sample s;
  s.x_star = generate_signal(A.cols(), config.nonzero_prob, signal_rng);
  const Vector clean = f.values(A * s.x_star);
  if (config.snr_db) {
    auto noise_rng = make_stream(config.seed, StreamRole::Noise, set, index);
    s.epsilon = generate_noise(clean, config.snr_db, noise_rng);
  } else {
    s.epsilon = Vector::Zero(clean.size());
  }
  s.y = clean + s.epsilon;
  return s;
}

InstanceSet empty_set(const GenerationConfig& config, const NonlinearFunction& f, const Dictionary& dict,
                      SampleSet set, std::uint64_t first_index, Index count) {
  config.validate();
  if (!dict.A || dict.A->rows() != config.m || dict.A->cols() != config.n)
    throw DimensionError("dictionary shape does not match the generation config");
  InstanceSet out;
  out.A = dict.A;
  out.x_star.resize(config.n, count);
  out.epsilon.resize(config.m, count);
  out.y.resize(config.m, count);
  out.config = config;
  out.config.batch = count;
  out.f_id = f.id();
  out.set = set;
  out.first_index = first_index;
  out.cond_pre_normalization = dict.cond_pre_normalization;
  out.cond_post_normalization = dict.cond_post_normalization;
  return out;
}

}  // namespace

ProblemInstance generate_instance(const GenerationConfig& config, const NonlinearFunction& f,
                                  std::shared_ptr<const Matrix> A, SampleSet set, std::uint64_t index) {
  config.validate();
  if (!A || A->rows() != config.m || A->cols() != config.n)
    throw DimensionError("dictionary shape does not match the generation config");
  auto s = draw_sample(config, f, *A, set, index);
  ProblemInstance p;
  p.A = std::move(A);
  p.x_star = std::move(s.x_star);
  p.epsilon = std::move(s.epsilon);
  p.y = std::move(s.y);
  p.seed = config.seed;
  p.snr_db = config.snr_db;
  p.cond_target = config.cond_number;
  p.f_id = f.id();
  return p;
}

ProblemInstance generate_instance_with_support(const GenerationConfig& config, const NonlinearFunction& f,
                                               std::shared_ptr<const Matrix> A, Index support, std::uint64_t index) {
  config.validate();
  if (!A || A->rows() != config.m || A->cols() != config.n)
    throw DimensionError("dictionary shape does not match the generation config");
  auto support_rng = make_stream(config.seed, StreamRole::Support, SampleSet::Adhoc, index);
  auto noise_rng = make_stream(config.seed, StreamRole::Noise, SampleSet::Adhoc, index);
  ProblemInstance p;
  p.x_star = generate_signal_with_support(config.n, support, support_rng);
  const Vector clean = f.values(*A * p.x_star);
  p.epsilon = generate_noise(clean, config.snr_db, noise_rng);
  p.y = clean + p.epsilon;
  p.A = std::move(A);
  p.seed = config.seed;
  p.snr_db = config.snr_db;
  p.cond_target = config.cond_number;
  p.f_id = f.id();
  return p;
}

ProblemInstance generate_instance(const GenerationConfig& config, const NonlinearFunction& f) {
  return generate_instance(config, f, generate_dictionary(config).A, SampleSet::Adhoc, 0);
}

ProblemInstance InstanceSet::instance(Index j) const {
  ProblemInstance p;
  p.A = A;
  p.x_star = x_star.col(j);
  p.epsilon = epsilon.col(j);
  p.y = y.col(j);
  p.seed = config.seed;
  p.snr_db = config.snr_db;
  p.cond_target = config.cond_number;
  p.f_id = f_id;
  return p;
}

InstanceSet generate_set(const GenerationConfig& config, const NonlinearFunction& f, const Dictionary& dict,
                         SampleSet set, std::uint64_t first_index, Index count) {
  InstanceSet out = empty_set(config, f, dict, set, first_index, count);
  const Matrix& A = *dict.A;
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < count; ++j) {
    auto s = draw_sample(config, f, A, set, first_index + static_cast<std::uint64_t>(j));
    out.x_star.col(j) = s.x_star;
    out.epsilon.col(j) = s.epsilon;
    out.y.col(j) = s.y;
  }
  return out;
}

InstanceSet generate_set_serial(const GenerationConfig& config, const NonlinearFunction& f,
                                const Dictionary& dict, SampleSet set, std::uint64_t first_index, Index count) {
  InstanceSet out = empty_set(config, f, dict, set, first_index, count);
  for (Index j = 0; j < count; ++j) {
    auto s = draw_sample(config, f, *dict.A, set, first_index + static_cast<std::uint64_t>(j));
    out.x_star.col(j) = s.x_star;
    out.epsilon.col(j) = s.epsilon;
    out.y.col(j) = s.y;
  }
  return out;
}

const char* sample_set_name(SampleSet s) {
  switch (s) {
    case SampleSet::Test: return "test";
    case SampleSet::Train: return "train";
    case SampleSet::Validation: return "validation";
    case SampleSet::Adhoc: return "adhoc";
  }
  return "adhoc";
}

SampleSet parse_sample_set(const std::string& s) {
  if (s == "test") return SampleSet::Test;
  if (s == "train") return SampleSet::Train;
  if (s == "validation") return SampleSet::Validation;
  if (s == "adhoc") return SampleSet::Adhoc;
  throw std::invalid_argument("unknown sample set '" + s + "' (expected test, train, validation or adhoc)");
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_instance_set(const InstanceSet& set, const std::filesystem::path& stem) {
  const std::vector<Matrix> mats{*set.A, set.x_star, set.epsilon, set.y};
  io::write_matrices(with_suffix(stem, ".bin"), mats);

  nlohmann::json meta;
  meta["format"] = "nlreg-instances";
  meta["version"] = 1;
  meta["matrices"] = {"A", "x_star", "epsilon", "y"};
  meta["m"] = set.config.m;
  meta["n"] = set.config.n;
  meta["batch"] = set.size();
  meta["seed"] = set.config.seed;
  meta["f_id"] = set.f_id;
  meta["nonzero_prob"] = set.config.nonzero_prob;
  meta["snr_db"] = set.config.snr_db ? nlohmann::json(*set.config.snr_db) : nlohmann::json(nullptr);
  meta["cond_target"] = set.config.cond_number ? nlohmann::json(*set.config.cond_number) : nlohmann::json(nullptr);
  meta["cond_pre_normalization"] =
      set.cond_pre_normalization ? nlohmann::json(*set.cond_pre_normalization) : nlohmann::json(nullptr);
  meta["cond_post_normalization"] = set.cond_post_normalization;
  meta["sample_set"] = sample_set_name(set.set);
  meta["first_index"] = set.first_index;
  meta["dictionary_fingerprint"] = io::fingerprint(*set.A);
  // Empirical Assumption-style bounds per sample: l1 noise, sparsity, peak amplitude.
  std::vector<double> sigma, peak;
  std::vector<Index> support;
  for (Index j = 0; j < set.size(); ++j) {
    sigma.push_back(set.epsilon.col(j).lpNorm<1>());
    peak.push_back(set.x_star.col(j).lpNorm<Eigen::Infinity>());
    support.push_back((set.x_star.col(j).array() != 0.0).count());
  }
  meta["noise_l1"] = sigma;
  meta["signal_linf"] = peak;
  meta["support_size"] = support;
  io::write_json(with_suffix(stem, ".json"), meta);
}

InstanceSet load_instance_set(const std::filesystem::path& stem) {
  const auto meta = io::read_json(with_suffix(stem, ".json"));
  auto mats = io::read_matrices(with_suffix(stem, ".bin"));
  if (mats.size() != 4) throw FormatError("instance container must hold exactly 4 matrices");
  InstanceSet set;
  try {
    set.config.m = meta.at("m").get<Index>();
    set.config.n = meta.at("n").get<Index>();
    set.config.seed = meta.at("seed").get<std::uint64_t>();
    set.config.nonzero_prob = meta.at("nonzero_prob").get<double>();
    set.config.batch = meta.at("batch").get<Index>();
    if (!meta.at("snr_db").is_null()) set.config.snr_db = meta.at("snr_db").get<double>();
    if (!meta.at("cond_target").is_null()) set.config.cond_number = meta.at("cond_target").get<double>();
    if (!meta.at("cond_pre_normalization").is_null())
      set.cond_pre_normalization = meta.at("cond_pre_normalization").get<double>();
    set.cond_post_normalization = meta.at("cond_post_normalization").get<double>();
    set.f_id = meta.at("f_id").get<std::string>();
    set.set = parse_sample_set(meta.at("sample_set").get<std::string>());
    set.first_index = meta.at("first_index").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("instance metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("instance metadata: ") + e.what());
  }
  get_function(set.f_id);
  const Index m = set.config.m, n = set.config.n, b = set.config.batch;
  if (mats[0].rows() != m || mats[0].cols() != n || mats[1].rows() != n || mats[1].cols() != b ||
      mats[2].rows() != m || mats[2].cols() != b || mats[3].rows() != m || mats[3].cols() != b)
    throw FormatError("instance container shapes disagree with metadata");
  set.A = std::make_shared<const Matrix>(std::move(mats[0]));
  set.x_star = std::move(mats[1]);
  set.epsilon = std::move(mats[2]);
  set.y = std::move(mats[3]);
  return set;
}

}  // namespace nlreg

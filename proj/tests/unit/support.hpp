#pragma once

#include "nlreg/core.hpp"
#include "nlreg/datagen.hpp"
#include "nlreg/funcs.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace nlreg::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix M(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) M(i, j) = normal(rng);
  return M;
}

inline Vector random_vector(Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

/// Unit-norm columns, y = f(A x*) + eps with an explicit support.
inline ProblemInstance random_instance(Index m, Index n, const NonlinearFunction& f, std::mt19937_64& rng,
                                       Index support = 3, double noise = 0.0) {
  Matrix A = random_matrix(m, n, rng);
  A.colwise().normalize();
  ProblemInstance p;
  p.A = std::make_shared<const Matrix>(std::move(A));
  p.x_star = Vector::Zero(n);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (Index k = 0; k < support; ++k) p.x_star[pick(rng)] = random_vector(1, rng)[0];
  p.epsilon = noise * random_vector(m, rng);
  p.y = f.values(*p.A * p.x_star) + p.epsilon;
  p.f_id = f.id();
  return p;
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nlreg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace nlreg::testing

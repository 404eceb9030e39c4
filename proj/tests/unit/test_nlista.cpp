#include "nlreg/adam.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"
#include "nlreg/nlista.hpp"
#include "support.hpp"

#include <doctest.h>
#include <omp.h>

#include <cmath>

using namespace nlreg;
using nlreg::testing::random_matrix;
using nlreg::testing::random_vector;

namespace {

std::shared_ptr<const Matrix> unit_dictionary(Index m, Index n, std::mt19937_64& rng) {
  Matrix A = random_matrix(m, n, rng);
  A.colwise().normalize();
  return std::make_shared<const Matrix>(std::move(A));
}

/// Model with parameters moved away from the initialisation so that every
/// gradient term is exercised.
NlistaModel perturbed_model(std::shared_ptr<const Matrix> A, const std::string& f_id, int depth, std::mt19937_64& rng,
                            double theta = 0.05) {
  NlistaModel model = make_model(A, f_id, depth);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  for (auto& layer : model.layers) {
    layer.W += 0.1 * random_matrix(A->rows(), A->cols(), rng);
    layer.beta *= unif(rng);
    layer.theta = theta * unif(rng);
  }
  return model;
}

double pairing(const NlistaModel& model, const Vector& y, const Vector& g, std::span<const double> gammas = {}) {
  ForwardOptions opts;
  opts.fixed_gammas = gammas;
  return g.dot(forward(model, y, nullptr, opts));
}

/// True when no pre-activation sits within `margin` of a threshold kink and no
/// gamma sits within `margin` of its clipping switch.
bool away_from_kinks(const NlistaModel& model, const ForwardTape& tape, double margin) {
  for (std::size_t t = 0; t < tape.layers.size(); ++t) {
    const auto& L = tape.layers[t];
    const double theta = model.layers[t].theta;
    if (((L.z.array().abs() - theta).abs() < margin).any()) return false;
    if (std::abs(L.v.norm() - 1.0) < margin) return false;
  }
  return true;
}

struct FdCase {
  NlistaModel model;
  Vector y, g;
  ForwardTape tape;
};

FdCase find_fd_case(const std::string& f_id, std::uint64_t seed, double y_scale) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto A = unit_dictionary(5, 8, rng);
    FdCase c{perturbed_model(A, f_id, 3, rng), y_scale * random_vector(5, rng), random_vector(8, rng), {}};
    forward(c.model, c.y, &c.tape);
    if (away_from_kinks(c.model, c.tape, 1e-3)) return c;
  }
  throw std::runtime_error("no kink-free finite-difference case found");
}

void check_against_fd(const FdCase& c, GammaGradient convention) {
  const double h = 1e-6;
  std::vector<double> gammas;
  for (const auto& L : c.tape.layers) gammas.push_back(L.gamma);
  const std::span<const double> fixed =
      convention == GammaGradient::StopGradient ? std::span<const double>(gammas) : std::span<const double>{};
  const auto grads = backward(c.model, c.tape, c.g, BackwardOptions{convention, 0});

  auto fd = [&](auto&& poke) {
    NlistaModel plus = c.model, minus = c.model;
    poke(plus, h);
    poke(minus, -h);
    return (pairing(plus, c.y, c.g, fixed) - pairing(minus, c.y, c.g, fixed)) / (2 * h);
  };
  for (std::size_t t = 0; t < c.model.layers.size(); ++t) {
    const double d_beta = fd([&](NlistaModel& m, double e) { m.layers[t].beta += e; });
    const double d_theta = fd([&](NlistaModel& m, double e) { m.layers[t].theta += e; });
    CHECK(nlreg::testing::relative_error(grads[t].beta, d_beta, 1e-6) <= 1e-4);
    CHECK(nlreg::testing::relative_error(grads[t].theta, d_theta, 1e-6) <= 1e-4);
    for (Index i : {0, 3}) {
      for (Index j : {1, 6}) {
        const double d_w = fd([&](NlistaModel& m, double e) { m.layers[t].W(i, j) += e; });
        CHECK(nlreg::testing::relative_error(grads[t].W(i, j), d_w, 1e-6) <= 1e-4);
      }
    }
  }
}

}  // namespace

TEST_SUITE("nlista") {
  TEST_CASE("gamma clip on hand examples") {
    Vector half(2);
    half << 0.3, 0.4;  // norm 0.5
    CHECK(gamma_clip(half).scale == 1.0);
    CHECK(gamma_clip(half).scaled == half);
    Vector four(2);
    four << 0.0, -4.0;
    CHECK(gamma_clip(four).scale == 0.25);
    CHECK(gamma_clip(four).scaled.norm() == doctest::Approx(1.0));
    CHECK(gamma_clip(Vector::Zero(3)).scale == 1.0);
  }

  TEST_CASE("clipped vectors never exceed unit norm") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> scale(0.0, 10.0);
    for (int k = 0; k < 500; ++k) CHECK(gamma_clip(scale(rng) * random_vector(7, rng)).scaled.norm() <= 1.0 + 1e-15);
  }

  TEST_CASE("initialisation follows the derivative bound") {
    std::mt19937_64 rng(2);
    auto A = unit_dictionary(4, 6, rng);
    const NlistaModel model = make_model(A, "10x+cos(2x)", 5);
    CHECK(model.depth() == 5);
    CHECK(model.layers[2].beta == doctest::Approx(1.0 / 144.0));
    CHECK(model.layers[4].W == *A);
    CHECK(!model.is_lista());
    const NlistaModel lista = make_model(A, "10x+cos(2x)", 5, true);
    CHECK(lista.is_lista());
    CHECK(lista.layers[0].beta == 1.0);
    CHECK_THROWS_AS(make_model(A, "nope", 2), UnknownFunctionError);
  }

  TEST_CASE("one identity layer without threshold is gamma A^T A x*") {
    std::mt19937_64 rng(3);
    auto A = unit_dictionary(6, 10, rng);
    NlistaModel model = make_model(A, "identity", 1);
    model.layers[0].theta = 0.0;
    Vector x_star = Vector::Zero(10);
    x_star[2] = 1.5;
    x_star[7] = -2.0;
    const Vector y = *A * x_star;
    const double gamma = y.norm() > 1.0 ? 1.0 / y.norm() : 1.0;
    CHECK((forward(model, y) - gamma * A->transpose() * *A * x_star).norm() <= 1e-13);
  }

  TEST_CASE("huge thresholds and zero weights keep the output at zero") {
    std::mt19937_64 rng(4);
    auto A = unit_dictionary(6, 10, rng);
    NlistaModel model = make_model(A, "2x+cos(x)", 4);
    const Vector y = 3.0 * random_vector(6, rng);
    for (auto& l : model.layers) l.theta = 1e6;
    CHECK(forward(model, y).isZero(0.0));
    for (auto& l : model.layers) {
      l.theta = 0.0;
      l.W.setZero();
    }
    CHECK(forward(model, y).isZero(0.0));
  }

  TEST_CASE("forward rejects wrong observation lengths and depths") {
    std::mt19937_64 rng(5);
    const NlistaModel model = make_model(unit_dictionary(6, 10, rng), "2x+cos(x)", 3);
    CHECK_THROWS_AS(forward(model, Vector::Zero(5)), DimensionError);
    CHECK_THROWS_AS(forward(model, Vector::Zero(6), nullptr, ForwardOptions{4, {}}), std::invalid_argument);
  }

  TEST_CASE("forward iterates end at the forward output") {
    std::mt19937_64 rng(6);
    const NlistaModel model = perturbed_model(unit_dictionary(6, 10, rng), "2x+cos(x)", 4, rng);
    const Vector y = random_vector(6, rng);
    const auto its = forward_iterates(model, y);
    REQUIRE(its.size() == 4);
    CHECK(its.back() == forward(model, y));
    CHECK(its[1] == forward(model, y, nullptr, ForwardOptions{2, {}}));
  }

  TEST_CASE("batched forward matches the per-sample pass") {
    std::mt19937_64 rng(7);
    const NlistaModel model = perturbed_model(unit_dictionary(12, 20, rng), "10x+cos(3x)", 5, rng);
    const Matrix Y = 2.0 * random_matrix(12, 9, rng);
    const Matrix X = forward_batch(model, Y);
    const Matrix Xs = forward_batch_serial(model, Y);
    for (Index j = 0; j < Y.cols(); ++j) {
      const Vector ref = forward(model, Y.col(j));
      CHECK((X.col(j) - ref).norm() <= 1e-12 * std::max(1.0, ref.norm()));
      CHECK(Xs.col(j) == ref);
    }
    const auto layers = forward_batch_iterates(model, Y, 3);
    REQUIRE(layers.size() == 3);
    CHECK(layers.back() == forward_batch(model, Y, nullptr, 3));
  }

  TEST_CASE("batched backward matches the sum of per-sample gradients") {
    std::mt19937_64 rng(8);
    const NlistaModel model = perturbed_model(unit_dictionary(10, 16, rng), "2x+cos(x)", 4, rng);
    const Matrix Y = 3.0 * random_matrix(10, 7, rng);
    const Matrix G = random_matrix(16, 7, rng);
    for (auto conv : {GammaGradient::StopGradient, GammaGradient::Exact}) {
      const BackwardOptions opts{conv, 1};
      BatchTape tape;
      forward_batch(model, Y, &tape);
      const auto batch = backward_batch(model, tape, G, opts);
      const auto serial = backward_batch_serial(model, Y, G, -1, opts);
      std::vector<LayerGradient> ref(4);
      for (Index j = 0; j < Y.cols(); ++j) {
        ForwardTape t;
        forward(model, Y.col(j), &t);
        const auto g = backward(model, t, G.col(j), opts);
        for (std::size_t l = 1; l < 4; ++l) {
          if (ref[l].W.size() == 0) ref[l].W = Matrix::Zero(10, 16);
          ref[l].W += g[l].W;
          ref[l].beta += g[l].beta;
          ref[l].theta += g[l].theta;
        }
      }
      CHECK(batch[0].W.size() == 0);
      for (std::size_t l = 1; l < 4; ++l) {
        CHECK((batch[l].W - ref[l].W).norm() <= 1e-12 * std::max(1.0, ref[l].W.norm()));
        CHECK(batch[l].beta == doctest::Approx(ref[l].beta).epsilon(1e-12));
        CHECK(batch[l].theta == doctest::Approx(ref[l].theta).epsilon(1e-12));
        CHECK((serial[l].W - ref[l].W).norm() <= 1e-12 * std::max(1.0, ref[l].W.norm()));
      }
    }
  }

  TEST_CASE("parallel kernels do not depend on the thread count") {
    std::mt19937_64 rng(9);
    const NlistaModel model = perturbed_model(unit_dictionary(20, 40, rng), "10x+cos(2x)", 3, rng);
    const Matrix Y = 5.0 * random_matrix(20, 33, rng);
    const Matrix G = random_matrix(40, 33, rng);
    auto run = [&](int threads) {
      const int saved = omp_get_max_threads();
      omp_set_num_threads(threads);
      BatchTape tape;
      const Matrix X = forward_batch(model, Y, &tape);
      auto grads = backward_batch(model, tape, G, BackwardOptions{GammaGradient::Exact, 0});
      omp_set_num_threads(saved);
      return std::make_pair(X, grads);
    };
    const auto [x1, g1] = run(1);
    const auto [x4, g4] = run(4);
    CHECK(x1 == x4);
    for (std::size_t l = 0; l < g1.size(); ++l) {
      CHECK(g1[l].W == g4[l].W);
      CHECK(g1[l].beta == g4[l].beta);
      CHECK(g1[l].theta == g4[l].theta);
    }
  }

  TEST_CASE("stop-gradient backward matches finite differences with gamma held fixed") {
    for (std::uint64_t seed : {10, 11}) check_against_fd(find_fd_case("2x+cos(x)", seed, 3.0), GammaGradient::StopGradient);
  }

  TEST_CASE("exact backward matches finite differences through the clip") {
    for (std::uint64_t seed : {12, 13}) check_against_fd(find_fd_case("2x+cos(x)", seed, 3.0), GammaGradient::Exact);
    // unclipped regime, where both conventions coincide
    check_against_fd(find_fd_case("identity", 14, 0.2), GammaGradient::Exact);
  }

  TEST_CASE("threshold gradient of a single layer in closed form") {
    std::mt19937_64 rng(15);
    const NlistaModel model = perturbed_model(unit_dictionary(6, 10, rng), "2x+cos(x)", 1, rng, 0.02);
    const Vector y = 2.0 * random_vector(6, rng), g = random_vector(10, rng);
    ForwardTape tape;
    forward(model, y, &tape);
    const Vector& z = tape.layers[0].z;
    double expected = 0.0;
    for (Index i = 0; i < 10; ++i)
      if (std::abs(z[i]) > model.layers[0].theta) expected -= (z[i] > 0 ? 1.0 : -1.0) * g[i];
    CHECK(backward(model, tape, g)[0].theta == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("zero output gradient gives zero parameter gradients") {
    std::mt19937_64 rng(16);
    const NlistaModel model = perturbed_model(unit_dictionary(6, 10, rng), "10x+cos(4x)", 3, rng);
    ForwardTape tape;
    forward(model, random_vector(6, rng), &tape);
    for (const auto& g : backward(model, tape, Vector::Zero(10), BackwardOptions{GammaGradient::Exact, 0})) {
      CHECK(g.W.isZero(0.0));
      CHECK(g.beta == 0.0);
      CHECK(g.theta == 0.0);
    }
  }

  TEST_CASE("frozen prefix receives no gradient") {
    std::mt19937_64 rng(17);
    const NlistaModel model = perturbed_model(unit_dictionary(6, 10, rng), "2x+cos(x)", 4, rng);
    ForwardTape tape;
    forward(model, random_vector(6, rng), &tape);
    const auto grads = backward(model, tape, random_vector(10, rng), BackwardOptions{GammaGradient::Exact, 2});
    CHECK(grads[0].W.size() == 0);
    CHECK(grads[1].W.size() == 0);
    CHECK(grads[2].W.size() == 60);
    CHECK(grads[3].W.size() == 60);
  }

  TEST_CASE("mse loss and its gradient") {
    Matrix X(2, 2), T(2, 2);
    X << 1, 0, 2, 3;
    T << 0, 0, 0, 1;
    Matrix grad;
    // squared errors 1 + 4 + 0 + 4 = 9 over a batch of 2
    CHECK(mse_loss(X, T, &grad) == 4.5);
    CHECK(grad == X - T);
    CHECK_THROWS_AS(mse_loss(X, Matrix::Zero(2, 3)), DimensionError);
  }
}

TEST_SUITE("adam") {
  namespace {
  std::vector<LayerGradient> random_grads(const NlistaModel& model, std::mt19937_64& rng) {
    std::vector<LayerGradient> g(model.layers.size());
    for (auto& l : g) {
      l.W = random_matrix(model.m(), model.n(), rng);
      l.beta = random_vector(1, rng)[0];
      l.theta = random_vector(1, rng)[0];
    }
    return g;
  }
  }  // namespace

  TEST_CASE("first step moves each parameter by about the learning rate") {
    std::mt19937_64 rng(20);
    NlistaModel model = make_model(unit_dictionary(4, 6, rng), "2x+cos(x)", 2);
    for (auto& l : model.layers) l.theta = 1.0;
    const NlistaModel before = model;
    const auto grads = random_grads(model, rng);
    AdamState state = AdamState::zeros(model);
    adam_step(model, grads, state, 1e-3);
    for (std::size_t t = 0; t < 2; ++t) {
      const Matrix delta = model.layers[t].W - before.layers[t].W;
      for (Index i = 0; i < delta.size(); ++i) {
        CHECK(std::abs(delta.data()[i]) == doctest::Approx(1e-3).epsilon(1e-4));
        CHECK(delta.data()[i] * grads[t].W.data()[i] < 0.0);
      }
      CHECK(std::abs(model.layers[t].beta - before.layers[t].beta) == doctest::Approx(1e-3).epsilon(1e-4));
      CHECK(std::abs(model.layers[t].theta - before.layers[t].theta) == doctest::Approx(1e-3).epsilon(1e-4));
    }
    CHECK(state.step == 1);
  }

  TEST_CASE("zero gradients leave parameters unchanged") {
    std::mt19937_64 rng(21);
    NlistaModel model = make_model(unit_dictionary(4, 6, rng), "2x+cos(x)", 2);
    const NlistaModel before = model;
    std::vector<LayerGradient> zero(2, LayerGradient{Matrix::Zero(4, 6), 0.0, 0.0});
    AdamState state = AdamState::zeros(model);
    for (int k = 0; k < 3; ++k) adam_step(model, zero, state, 1e-2);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(model.layers[t].W == before.layers[t].W);
      CHECK(model.layers[t].beta == before.layers[t].beta);
      CHECK(model.layers[t].theta == before.layers[t].theta);
    }
  }

  TEST_CASE("layers without a gradient are skipped and thresholds stay nonnegative") {
    std::mt19937_64 rng(22);
    NlistaModel model = make_model(unit_dictionary(4, 6, rng), "2x+cos(x)", 2);
    model.layers[1].theta = 1e-5;
    const NlistaModel before = model;
    std::vector<LayerGradient> grads(2);
    grads[1] = LayerGradient{Matrix::Ones(4, 6), 0.0, 1.0};
    AdamState state = AdamState::zeros(model);
    adam_step(model, grads, state, 1e-2);
    CHECK(model.layers[0].W == before.layers[0].W);
    CHECK(model.layers[0].beta == before.layers[0].beta);
    CHECK(model.layers[1].theta == 0.0);
  }

  TEST_CASE("replaying the same gradients is bit-identical") {
    std::mt19937_64 rng(23);
    const NlistaModel start = make_model(unit_dictionary(5, 8, rng), "10x+cos(2x)", 3);
    std::vector<std::vector<LayerGradient>> seq;
    for (int k = 0; k < 5; ++k) seq.push_back(random_grads(start, rng));
    auto replay = [&] {
      NlistaModel m = start;
      AdamState s = AdamState::zeros(m);
      for (const auto& g : seq) adam_step(m, g, s, 1e-3);
      return m;
    };
    const NlistaModel a = replay(), b = replay();
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(a.layers[t].W == b.layers[t].W);
      CHECK(a.layers[t].beta == b.layers[t].beta);
      CHECK(a.layers[t].theta == b.layers[t].theta);
    }
  }

  TEST_CASE("bias-corrected update matches a scalar recomputation") {
    std::mt19937_64 rng(24);
    NlistaModel model = make_model(unit_dictionary(3, 4, rng), "identity", 1);
    AdamState state = AdamState::zeros(model);
    const double g1 = 0.7, g2 = -0.2, lr = 0.01;
    double beta = model.layers[0].beta;
    double m = 0.0, v = 0.0;
    int k = 0;
    for (double g : {g1, g2}) {
      adam_step(model, {LayerGradient{Matrix::Zero(3, 4), g, 0.0}}, state, lr);
      ++k;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mhat = m / (1 - std::pow(0.9, k)), vhat = v / (1 - std::pow(0.999, k));
      beta -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    CHECK(model.layers[0].beta == doctest::Approx(beta).epsilon(1e-12));
  }
}

#pragma once

#include "nlreg/adam.hpp"
#include "nlreg/datagen.hpp"
#include "nlreg/nlista.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace nlreg {

struct TrainConfig {
  Index batch_size = 64;
  std::vector<double> lr_schedule{1e-3, 1e-4, 2e-5};
  long patience = 4000;          // training steps without validation improvement
  int frozen_prefix_after = 11;  // stages beyond this freeze layers 1..frozen_prefix_after
  long max_steps_per_stage = 200000;
  Index val_size = 1000;
  long val_every = 100;
  GammaGradient gamma_gradient = GammaGradient::Exact;
  /// Stage-1 initialisation of the first layer: W = A, beta = init_beta
  /// (default 1/sup|f'|^2), theta = init_theta.
  std::optional<double> init_beta;
  double init_theta = 0.0;
  /// Optional cap on the number of stages run in this call (for resumable,
  /// time-sliced training); -1 trains through the last layer.
  int stop_after_stage = -1;

  void validate() const;
};

struct TrainHooks {
  std::function<void(const TrainLogEntry&)> on_validation;
  /// Called after every completed stage with the model in its best state.
  std::function<void(const NlistaModel&)> on_stage_end;
};

/// Layer-wise progressive training. Stage s trains on the mean squared error of
/// layer s's output; a fresh stage copies the previous layer's parameters.
/// Training samples come from `data` (dictionary, f, SNR, seed) and batch k of
/// stage s is always the same draw, so a run resumed from a stage checkpoint
/// matches an uninterrupted one.
void train_progressive(NlistaModel& model, const GenerationConfig& data, const Dictionary& dict,
                       const TrainConfig& config, const TrainHooks& hooks = {});

/// Seed of the training and validation streams for training run `train_seed`
/// on data generated with `seed`; run 0 uses `seed` itself.
std::uint64_t training_data_seed(std::uint64_t seed, std::uint64_t train_seed);

/// Index of the first sample of training batch `batch` in stage `stage`.
std::uint64_t train_sample_index(int stage, long batch, Index batch_size);

}  // namespace nlreg

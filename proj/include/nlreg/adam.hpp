#pragma once

#include "nlreg/nlista.hpp"

#include <vector>

namespace nlreg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments for every layer parameter, plus the step count
/// used for bias correction.
struct AdamState {
  struct Moments {
    Matrix mW, vW;
    double m_beta = 0.0, v_beta = 0.0;
    double m_theta = 0.0, v_theta = 0.0;
  };
  std::vector<Moments> layers;
  long step = 0;

  static AdamState zeros(const NlistaModel& model);
};

/// One bias-corrected Adam update of the layers that carry a gradient (layers
/// whose gradient W is empty are skipped entirely). Thresholds are clamped to
/// be nonnegative afterwards.
void adam_step(NlistaModel& model, const std::vector<LayerGradient>& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

}  // namespace nlreg

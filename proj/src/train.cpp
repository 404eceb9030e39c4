#include "nlreg/train.hpp"
#include "nlreg/funcs.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nlreg {

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (lr_schedule.empty()) throw std::invalid_argument("lr_schedule must not be empty");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i] > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (i > 0 && !(lr_schedule[i] < lr_schedule[i - 1]))
      throw std::invalid_argument("lr_schedule must be strictly decreasing");
  }
  if (patience <= 0) throw std::invalid_argument("patience must be positive");
  if (frozen_prefix_after < 0) throw std::invalid_argument("frozen_prefix_after must be nonnegative");
  if (max_steps_per_stage <= 0) throw std::invalid_argument("max_steps_per_stage must be positive");
  if (val_size <= 0) throw std::invalid_argument("val_size must be positive");
  if (val_every <= 0) throw std::invalid_argument("val_every must be positive");
}

std::uint64_t training_data_seed(std::uint64_t seed, std::uint64_t train_seed) {
  return train_seed == 0 ? seed : seed ^ (0x9E3779B97F4A7C15ULL * train_seed);
}

std::uint64_t train_sample_index(int stage, long batch, Index batch_size) {
  return (static_cast<std::uint64_t>(stage) << 40) + static_cast<std::uint64_t>(batch) * static_cast<std::uint64_t>(batch_size);
}

namespace {

bool finite(const std::vector<LayerGradient>& grads) {
  for (const auto& g : grads)
    if (!std::isfinite(g.beta) || !std::isfinite(g.theta) || !g.W.allFinite()) return false;
  return true;
}

}  // namespace

void train_progressive(NlistaModel& model, const GenerationConfig& data, const Dictionary& dict,
                       const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  data.validate();
  if (!model.A || *model.A != *dict.A) throw std::invalid_argument("model and training data use different dictionaries");
  const NonlinearFunction& f = get_function(model.f_id);
  const int T = model.depth();

  const InstanceSet val = generate_set(data, f, dict, SampleSet::Validation, 0, config.val_size);
  auto val_loss = [&](int depth) { return mse_loss(forward_batch(model, val.y, nullptr, depth), val.x_star); };

  int last_stage = T;
  if (config.stop_after_stage >= 0) last_stage = std::min(T, config.stop_after_stage);

  for (int stage = model.completed_stages + 1; stage <= last_stage; ++stage) {
    const auto s = static_cast<std::size_t>(stage - 1);
    if (stage == 1) {
      const double sup = model.update_function().derivative_sup();
      model.layers[0] = {*model.A, config.init_beta.value_or(1.0 / (sup * sup)), config.init_theta};
    } else {
      model.layers[s] = model.layers[s - 1];
    }
    const int first_trainable = stage > config.frozen_prefix_after ? config.frozen_prefix_after : 0;
    const BackwardOptions bopts{config.gamma_gradient, first_trainable};

    auto best_layers = model.layers;
    double best = val_loss(stage);
    if (!std::isfinite(best)) best = std::numeric_limits<double>::infinity();
    std::size_t lr_index = 0;
    AdamState adam = AdamState::zeros(model);
    long since_improvement = 0;

    // Falls back to the best parameters seen and moves to the next learning
    // rate; returns false once the schedule is exhausted.
    auto drop_lr = [&]() {
      model.layers = best_layers;
      adam = AdamState::zeros(model);
      since_improvement = 0;
      return ++lr_index < config.lr_schedule.size();
    };

    BatchTape tape;
    Matrix grad_out;
    for (long step = 0; step < config.max_steps_per_stage; ++step) {
      const InstanceSet batch =
          generate_set(data, f, dict, SampleSet::Train, train_sample_index(stage, step, config.batch_size),
                       config.batch_size);
      const Matrix X = forward_batch(model, batch.y, &tape, stage);
      const double loss = mse_loss(X, batch.x_star, &grad_out);
      auto grads = backward_batch(model, tape, grad_out, bopts);
      if (!std::isfinite(loss) || !finite(grads)) {
        if (!drop_lr()) break;
        continue;
      }
      adam_step(model, grads, adam, config.lr_schedule[lr_index]);

      if ((step + 1) % config.val_every != 0) continue;
      const double v = val_loss(stage);
      TrainLogEntry entry{step + 1, stage, config.lr_schedule[lr_index], v};
      model.train_log.push_back(entry);
      if (hooks.on_validation) hooks.on_validation(entry);
      if (!std::isfinite(v)) {
        if (!drop_lr()) break;
        continue;
      }
      if (v < best) {
        best = v;
        best_layers = model.layers;
        since_improvement = 0;
      } else {
        since_improvement += config.val_every;
        if (since_improvement >= config.patience && !drop_lr()) break;
      }
    }
    model.layers = best_layers;
    model.completed_stages = stage;
    if (hooks.on_stage_end) hooks.on_stage_end(model);
  }
}

}  // namespace nlreg

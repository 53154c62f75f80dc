#pragma once

#include <cstdint>

#include "mmgan/conditioning.hpp"
#include "mmgan/error.hpp"
#include "mmgan/scenario.hpp"

namespace mmgan {

struct TrainConfig {
  double lambda = 0.9;
  double d_loss_scale = 0.5;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 4;
  int epochs = 60;
  bool implicit_conditioning = true;
  Imputation imputation = Imputation::Zeros;
  CurriculumSchedule schedule{};
  SynthesisMode mode = SynthesisMode::mimo();
  std::uint64_t seed = 0;
  int checkpoint_every = 5;

  static TrainConfig mimo_defaults() { return {}; }

  // Many-to-one: 30 epochs, batch 2, uniform scenario sampling.
  static TrainConfig miso_defaults(int target) {
    TrainConfig c;
    c.batch_size = 2;
    c.epochs = 30;
    c.schedule.total_epochs = 30;
    c.schedule.mode = SamplingMode::Random;
    c.mode = SynthesisMode::miso(target);
    return c;
  }

  void validate() const {
    // lambda = 1 drops the adversarial term (ablation).
    if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in (0, 1]");
    if (!(d_loss_scale > 0.0)) throw ConfigError("d_loss_scale must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    if (schedule.total_epochs != epochs) throw ConfigError("schedule total_epochs must equal epochs");
    if (schedule.tier_epochs < 1) throw ConfigError("tier_epochs must be positive");
    if (schedule.uniform_after < 0) throw ConfigError("uniform_after must be >= 0");
  }
};

}  // namespace mmgan

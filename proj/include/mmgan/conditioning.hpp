#pragma once

// Implicit conditioning: imputing the generator input, re-inserting real
// sequences into the generator output before discrimination, and the
// per-sequence patch targets for the discriminator.

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "mmgan/error.hpp"
#include "mmgan/scenario.hpp"

namespace mmgan {

enum class Imputation { Zeros, Noise, Average };

inline std::string to_string(Imputation i) {
  switch (i) {
    case Imputation::Zeros: return "zeros";
    case Imputation::Noise: return "noise";
    case Imputation::Average: return "average";
  }
  return "?";
}

inline Imputation parse_imputation(const std::string& s) {
  if (s == "zeros") return Imputation::Zeros;
  if (s == "noise") return Imputation::Noise;
  if (s == "average") return Imputation::Average;
  throw ConfigError("imputation must be zeros, noise or average; got '" + s + "'");
}

// [1, C, 1, 1] boolean mask, true where the scenario has the sequence.
inline torch::Tensor presence_mask(const Scenario& s, torch::Device device = torch::kCPU) {
  auto m = torch::zeros({1, s.channels(), 1, 1}, torch::TensorOptions().dtype(torch::kBool));
  auto acc = m.accessor<bool, 4>();
  for (int k = 0; k < s.channels(); ++k) acc[0][k][0][0] = s.present(k);
  return m.to(device);
}

inline void check_scenario_channels(const torch::Tensor& x, const Scenario& s, const char* who) {
  if (x.dim() != 4 || x.size(1) != s.channels()) {
    throw ShapeError(std::string(who) + ": tensor channels do not match scenario '" + s.str() + "'");
  }
}

// Generator input X_z: real data on present channels, the imputed value on
// missing ones. Noise imputation draws i.i.d. N(0, 1) per pixel; average
// fills each missing channel with the per-pixel mean of the present ones.
inline torch::Tensor impute(const torch::Tensor& real, const Scenario& s, Imputation strategy,
                            std::optional<at::Generator> gen = std::nullopt) {
  check_scenario_channels(real, s, "impute");
  const auto present = presence_mask(s, real.device());
  torch::Tensor fill;
  switch (strategy) {
    case Imputation::Zeros:
      fill = torch::zeros_like(real);
      break;
    case Imputation::Noise:
      fill = at::empty(real.sizes(), real.options()).normal_(0.0, 1.0, gen);
      break;
    case Imputation::Average: {
      const auto w = present.to(real.scalar_type());
      const auto mean = (real * w).sum(1, /*keepdim=*/true) / static_cast<double>(s.present_count());
      fill = mean.expand_as(real);
      break;
    }
  }
  return torch::where(present, real, fill);
}

// Discriminator candidate X_i. With implicit conditioning the present
// channels are replaced by the real sequences, so no gradient reaches the
// generator's outputs for those channels; without it the raw generator
// output is used.
inline torch::Tensor replace_present(const torch::Tensor& generated, const torch::Tensor& real, const Scenario& s,
                                     bool implicit_conditioning = true) {
  check_scenario_channels(generated, s, "replace_present");
  if (!generated.sizes().equals(real.sizes())) throw ShapeError("replace_present: generated/real shape mismatch");
  if (!implicit_conditioning) return generated;
  return torch::where(presence_mask(s, generated.device()), real, generated);
}

// L_r: channel k is 1 where sequence k is real (present), 0 where it was
// synthesized. The whole score map of a channel shares one label.
inline torch::Tensor real_fake_targets(const Scenario& s, at::IntArrayRef score_shape,
                                       const torch::TensorOptions& opts = torch::kFloat) {
  if (score_shape.size() != 4 || score_shape[1] != s.channels()) {
    throw ShapeError("score map shape does not match scenario '" + s.str() + "'");
  }
  return presence_mask(s).to(opts.device()).to(opts.dtype().toScalarType()).expand(score_shape).contiguous();
}

// L_ar: every patch labelled real.
inline torch::Tensor all_real_targets(at::IntArrayRef score_shape, const torch::TensorOptions& opts = torch::kFloat) {
  return torch::ones(score_shape, opts);
}

struct ConditioningTensors {
  torch::Tensor x_z;       // generator input
  torch::Tensor x_r;       // ground truth
  torch::Tensor x_i;       // undefined until a generator output is supplied
  torch::Tensor l_r;       // per-sequence patch targets
  torch::Tensor l_ar;      // all-real targets
};

inline ConditioningTensors build_conditioning(const torch::Tensor& real, const Scenario& s, Imputation strategy,
                                              at::IntArrayRef score_shape,
                                              const std::optional<torch::Tensor>& generated = std::nullopt,
                                              bool implicit_conditioning = true,
                                              std::optional<at::Generator> gen = std::nullopt) {
  ConditioningTensors t;
  t.x_r = real;
  t.x_z = impute(real, s, strategy, gen);
  if (generated) t.x_i = replace_present(*generated, real, s, implicit_conditioning);
  t.l_r = real_fake_targets(s, score_shape, real.options());
  t.l_ar = all_real_targets(score_shape, real.options());
  return t;
}

}  // namespace mmgan

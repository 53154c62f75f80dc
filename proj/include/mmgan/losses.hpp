#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "mmgan/error.hpp"
#include "mmgan/scenario.hpp"

namespace mmgan {

struct GeneratorLoss {
  torch::Tensor total;
  torch::Tensor reconstruction;  // selective L1
  torch::Tensor adversarial;     // least-squares term against all-real targets
};

// Sum over `channels` of the per-channel mean absolute error.
inline torch::Tensor selective_l1(const torch::Tensor& generated, const torch::Tensor& real, std::span<const int> channels) {
  auto total = torch::zeros({}, generated.options());
  for (int k : channels) {
    total = total + (generated.select(1, k) - real.select(1, k)).abs().mean();
  }
  return total;
}

inline torch::Tensor least_squares(const torch::Tensor& scores, const torch::Tensor& targets) {
  if (!scores.sizes().equals(targets.sizes())) throw ShapeError("score and target maps differ in shape");
  return (scores - targets).pow(2).mean();
}

// lambda * L1 + (1 - lambda) * L2. With implicit conditioning the L1 runs over
// the missing channels only; without it over every channel.
inline GeneratorLoss generator_loss(const torch::Tensor& generated, const torch::Tensor& real,
                                    const torch::Tensor& scores_on_candidate, const torch::Tensor& all_real,
                                    std::span<const int> missing, double lambda, bool implicit_conditioning = true) {
  if (!generated.sizes().equals(real.sizes())) throw ShapeError("generator output and ground truth differ in shape");
  GeneratorLoss out;
  if (implicit_conditioning) {
    if (missing.empty()) throw EmptyMissingSet("selective reconstruction loss needs at least one missing sequence");
    out.reconstruction = selective_l1(generated, real, missing);
  } else {
    std::vector<int> all(static_cast<std::size_t>(generated.size(1)));
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
    out.reconstruction = selective_l1(generated, real, all);
  }
  out.adversarial = least_squares(scores_on_candidate, all_real);
  out.total = lambda * out.reconstruction + (1.0 - lambda) * out.adversarial;
  return out;
}

inline GeneratorLoss generator_loss(const torch::Tensor& generated, const torch::Tensor& real,
                                    const torch::Tensor& scores_on_candidate, const torch::Tensor& all_real,
                                    const Scenario& s, double lambda, bool implicit_conditioning = true) {
  const auto missing = s.missing_indices();
  return generator_loss(generated, real, scores_on_candidate, all_real, missing, lambda, implicit_conditioning);
}

// scale * (L2(D(real pair), L_ar) + L2(D(candidate pair), L_r)).
inline torch::Tensor discriminator_loss(const torch::Tensor& scores_real, const torch::Tensor& scores_fake,
                                        const torch::Tensor& real_fake_targets, const torch::Tensor& all_real,
                                        double scale = 0.5) {
  return scale * (least_squares(scores_real, all_real) + least_squares(scores_fake, real_fake_targets));
}

}  // namespace mmgan

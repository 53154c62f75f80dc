#pragma once

// UNet generator and PatchGAN discriminator.
//
// Generator: `depth` stride-2 4x4 down blocks take an S x S input (S = 2^depth)
// to a 1x1 bottleneck, then mirrored transposed-conv up blocks with skip
// concatenation restore S x S with C output channels. Encoder blocks use
// LeakyReLU(0.2), decoder blocks ReLU; batch norm everywhere except the first
// and innermost encoder blocks and the output block; dropout on the first
// `dropout_blocks` decoder blocks.
//
// Generator batch norm always normalizes with the statistics of the current
// batch, also in eval mode (the Pix2Pix test-time convention). Each training
// batch shares one scenario, so running averages would mix the statistics of
// differently imputed inputs.
//
// Discriminator: the candidate and reference images are concatenated on the
// channel axis (2C), passed through `n_blocks` stride-2 blocks, a (1,0,1,0)
// zero pad and a final 4x4 conv producing one raw score map per sequence at
// S / 2^n_blocks resolution.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "mmgan/error.hpp"

namespace mmgan {

enum class FinalActivation { ReLU, Linear };

inline std::string to_string(FinalActivation a) { return a == FinalActivation::ReLU ? "relu" : "linear"; }

inline FinalActivation parse_final_activation(const std::string& s) {
  if (s == "relu") return FinalActivation::ReLU;
  if (s == "linear") return FinalActivation::Linear;
  throw ConfigError("final_activation must be 'relu' or 'linear', got '" + s + "'");
}

struct GeneratorSpec {
  int channels = 4;
  int depth = 8;
  std::vector<int> widths{64, 128, 256, 512, 512, 512, 512, 512};
  FinalActivation final_activation = FinalActivation::ReLU;
  double dropout_p = 0.5;
  int dropout_blocks = 3;

  std::int64_t image_size() const { return std::int64_t{1} << depth; }

  void validate() const {
    if (channels < 1) throw ConfigError("generator channels must be positive");
    if (depth < 2 || depth > 12) throw ConfigError("generator depth must lie in [2, 12]");
    if (static_cast<int>(widths.size()) != depth) {
      throw ConfigError("generator needs one width per level (" + std::to_string(depth) + "), got " +
                        std::to_string(widths.size()));
    }
    for (int w : widths) {
      if (w < 1) throw ConfigError("generator widths must be positive");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must lie in [0, 1)");
  }

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct DiscriminatorSpec {
  int channels = 4;
  int n_blocks = 4;
  std::vector<int> widths{64, 128, 256, 512};
  double input_noise_sigma = 0.0;

  // Two-block variant with noisy inputs used for many-to-one training.
  static DiscriminatorSpec small(int channels) { return {channels, 2, {64, 128}, 0.05}; }

  std::int64_t downsampling() const { return std::int64_t{1} << n_blocks; }

  void validate() const {
    if (channels < 1) throw ConfigError("discriminator channels must be positive");
    if (n_blocks < 1) throw ConfigError("discriminator needs at least one block");
    if (static_cast<int>(widths.size()) != n_blocks) {
      throw ConfigError("discriminator needs one width per block");
    }
    if (input_noise_sigma < 0.0) throw ConfigError("input_noise_sigma must be >= 0");
  }

  friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

namespace detail {

inline void check_image_batch(const torch::Tensor& x, std::int64_t channels, const char* who) {
  if (x.dim() != 4) {
    throw ShapeError(std::string(who) + ": expected [B,C,H,W], got " + std::to_string(x.dim()) + " dims");
  }
  if (x.size(1) != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(x.size(1)));
  }
}

inline std::string shape_str(const torch::Tensor& x) {
  std::string s = "[";
  for (std::int64_t i = 0; i < x.dim(); ++i) s += (i ? "," : "") + std::to_string(x.size(i));
  return s + "]";
}

}  // namespace detail

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    namespace nn = torch::nn;
    const int depth = spec_.depth;
    const auto& w = spec_.widths;
    for (int i = 0; i < depth; ++i) {
      const int in = i == 0 ? spec_.channels : w[i - 1];
      const bool norm = i != 0 && i != depth - 1;
      nn::Sequential block;
      block->push_back(nn::Conv2d(nn::Conv2dOptions(in, w[i], 4).stride(2).padding(1).bias(!norm)));
      if (norm) block->push_back(batch_norm(w[i]));
      block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
      down_.push_back(register_module("down" + std::to_string(i), block));
    }
    for (int j = 0; j < depth - 1; ++j) {
      const int in = j == 0 ? w[depth - 1] : 2 * w[depth - 1 - j];
      const int out = w[depth - 2 - j];
      nn::Sequential block;
      block->push_back(
          nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(false)));
      block->push_back(batch_norm(out));
      block->push_back(nn::ReLU());
      if (j < spec_.dropout_blocks && spec_.dropout_p > 0.0) block->push_back(nn::Dropout(spec_.dropout_p));
      up_.push_back(register_module("up" + std::to_string(j), block));
    }
    out_ = register_module(
        "out", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * w[0], spec_.channels, 4).stride(2).padding(1)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    detail::check_image_batch(x, spec_.channels, "generator");
    const auto size = spec_.image_size();
    if (x.size(2) != size || x.size(3) != size) {
      throw ShapeError("generator of depth " + std::to_string(spec_.depth) + " expects " +
                       std::to_string(size) + "x" + std::to_string(size) + " input, got " +
                       detail::shape_str(x));
    }
    std::vector<torch::Tensor> skips;
    skips.reserve(down_.size());
    torch::Tensor h = x;
    for (auto& block : down_) {
      h = block->forward(h);
      skips.push_back(h);
    }
    const auto depth = static_cast<std::size_t>(spec_.depth);
    for (std::size_t j = 0; j + 1 < depth; ++j) {
      h = up_[j]->forward(h);
      h = torch::cat({h, skips[depth - 2 - j]}, 1);
    }
    h = out_->forward(h);
    return spec_.final_activation == FinalActivation::ReLU ? torch::relu(h) : h;
  }

  const GeneratorSpec& spec() const { return spec_; }

 private:
  static torch::nn::BatchNorm2d batch_norm(int features) {
    return torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(features).track_running_stats(false));
  }

  GeneratorSpec spec_;
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::Sequential> up_;
  torch::nn::ConvTranspose2d out_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    namespace nn = torch::nn;
    int in = 2 * spec_.channels;
    for (int i = 0; i < spec_.n_blocks; ++i) {
      const int out = spec_.widths[static_cast<std::size_t>(i)];
      const bool norm = i != 0;
      body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(!norm)));
      if (norm) body_->push_back(nn::BatchNorm2d(out));
      body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
      in = out;
    }
    body_->push_back(nn::ZeroPad2d(nn::ZeroPad2dOptions({1, 0, 1, 0})));
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, spec_.channels, 4).padding(1)));
    register_module("body", body_);
  }

  // Scores `candidate` against `reference`; both [B,C,H,W].
  torch::Tensor forward(const torch::Tensor& candidate, const torch::Tensor& reference) {
    detail::check_image_batch(candidate, spec_.channels, "discriminator");
    detail::check_image_batch(reference, spec_.channels, "discriminator");
    if (!candidate.sizes().equals(reference.sizes())) {
      throw ShapeError("discriminator inputs differ in shape: " + detail::shape_str(candidate) + " vs " +
                       detail::shape_str(reference));
    }
    const auto f = spec_.downsampling();
    if (candidate.size(2) % f != 0 || candidate.size(3) % f != 0 || candidate.size(2) < f) {
      throw ShapeError("discriminator input " + detail::shape_str(candidate) + " not divisible by " +
                       std::to_string(f));
    }
    torch::Tensor a = candidate;
    torch::Tensor b = reference;
    if (is_training() && spec_.input_noise_sigma > 0.0) {
      a = a + torch::randn_like(a) * spec_.input_noise_sigma;
      b = b + torch::randn_like(b) * spec_.input_noise_sigma;
    }
    return body_->forward(torch::cat({a, b}, 1));
  }

  // Score-map shape for an input of the given spatial size.
  std::vector<std::int64_t> output_shape(std::int64_t batch, std::int64_t height, std::int64_t width) const {
    return {batch, spec_.channels, height / spec_.downsampling(), width / spec_.downsampling()};
  }

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(Discriminator);

// Conv / transposed-conv weights ~ N(0, sigma^2), their biases zero. Other
// parameters keep their defaults (batch-norm scale 1, shift 0).
inline void init_weights(torch::nn::Module& net, double sigma, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& m : net.modules(/*include_self=*/true)) {
    torch::Tensor weight;
    torch::Tensor bias;
    if (auto* c = m->as<torch::nn::Conv2d>()) {
      weight = c->weight;
      bias = c->bias;
    } else if (auto* t = m->as<torch::nn::ConvTranspose2d>()) {
      weight = t->weight;
      bias = t->bias;
    } else {
      continue;
    }
    weight.normal_(0.0, sigma, gen);
    if (bias.defined()) bias.zero_();
  }
}

inline std::int64_t parameter_count(const torch::nn::Module& net) {
  std::int64_t n = 0;
  for (const auto& p : net.parameters()) n += p.numel();
  return n;
}

// Every conv / transposed-conv weight, flattened and concatenated.
inline torch::Tensor conv_weights(torch::nn::Module& net) {
  std::vector<torch::Tensor> parts;
  for (auto& m : net.modules(true)) {
    if (auto* c = m->as<torch::nn::Conv2d>()) parts.push_back(c->weight.detach().flatten());
    if (auto* t = m->as<torch::nn::ConvTranspose2d>()) parts.push_back(t->weight.detach().flatten());
  }
  return torch::cat(parts);
}

}  // namespace mmgan

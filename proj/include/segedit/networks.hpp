// Copyright 2026 The segedit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEGEDIT_NETWORKS_HPP_
#define SEGEDIT_NETWORKS_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace segedit {

struct GeneratorSpec {
  int in_channels = 6;
  int out_channels = 3;
  int downsamples = 2;
  int residual_blocks = 4;
  int base_width = 16;

  void validate() const;
};

/// Encoder / residual bottleneck / decoder. Inputs whose sides are not a
/// multiple of 2^downsamples are edge-padded and the output is cropped back,
/// so the output always has the input's spatial size. Output is tanh-bounded.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorSpec& spec);

  /// [N, in_channels, H, W] -> [N, out_channels, H, W] in [-1, 1].
  torch::Tensor forward(const torch::Tensor& input);

  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  torch::nn::Sequential head_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::Sequential tail_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorSpec {
  int candidate_channels = 3;
  int condition_channels = 5;
  int width = 32;
  /// Number of layers t, including the final score layer.
  int layers = 4;

  void validate() const;
  /// Receptive field of one score element; inputs with a smaller side are
  /// zero-padded (centered) up to this size.
  int min_input_side() const;
};

struct DiscriminatorOutput {
  /// [N, 1, h, w] scores in (0, 1).
  torch::Tensor scores;
  /// t feature maps ordered shallow -> deep; the last is the score logits.
  std::vector<torch::Tensor> features;
};

/// Fully convolutional conditional patch discriminator: unpadded 3x3
/// convolutions, the first two with stride 2, LeakyReLU(0.2) between layers.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorSpec& spec);

  DiscriminatorOutput forward(const torch::Tensor& candidate,
                              const torch::Tensor& condition);

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::ModuleList convs_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Frozen multi-tap image encoder for the perceptual loss.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// [N, 3, H, W] -> r feature maps.
  virtual std::vector<torch::Tensor> taps(const torch::Tensor& images) = 0;
  /// One weight per tap.
  virtual const std::vector<double>& weights() const = 0;
  virtual void to(torch::ScalarType dtype) = 0;
  virtual std::vector<torch::Tensor> parameters() const = 0;
};

/// Per-tap weights used for the perceptual loss: [1/32, 1/16, 1/8, 1/4, 1].
std::vector<double> default_perceptual_weights();

struct EncoderSpec {
  std::vector<double> weights = default_perceptual_weights();
  std::uint64_t seed = 1234;
};

/// Five-stage conv pyramid with fixed random weights drawn from `seed`.
/// Parameters never require grad.
class RandomPyramidEncoder : public FeatureExtractor {
 public:
  explicit RandomPyramidEncoder(const EncoderSpec& spec = {});

  std::vector<torch::Tensor> taps(const torch::Tensor& images) override;
  const std::vector<double>& weights() const override { return weights_; }
  void to(torch::ScalarType dtype) override;
  std::vector<torch::Tensor> parameters() const override;

 private:
  std::vector<double> weights_;
  torch::nn::ModuleList stages_{nullptr};
};

/// Adapter for an exported TorchScript feature network (for example a
/// pre-trained 19-layer classification network) whose forward returns a
/// list or tuple of r tensors.
std::unique_ptr<FeatureExtractor> load_scripted_encoder(
    const std::filesystem::path& path, std::vector<double> weights);

/// Conv/linear weights ~ N(0, 0.02), biases 0, from a dedicated seed so
/// initialization is independent of construction order.
void init_gan_weights(torch::nn::Module& module, std::uint64_t seed);

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
void from_json(const nlohmann::json& j, GeneratorSpec& spec);
void to_json(nlohmann::json& j, const DiscriminatorSpec& spec);
void from_json(const nlohmann::json& j, DiscriminatorSpec& spec);

}  // namespace segedit

#endif  // SEGEDIT_NETWORKS_HPP_

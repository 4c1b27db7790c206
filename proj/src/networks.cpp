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

#include "segedit/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include <cmath>
#include <stdexcept>

namespace segedit {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(
      nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels));
}

class ResidualBlockImpl : public nn::Module {
 public:
  explicit ResidualBlockImpl(int channels) {
    body_ = register_module(
        "body", nn::Sequential(conv(channels, channels, 3, 1, 1),
                               instance_norm(channels), nn::ReLU(),
                               conv(channels, channels, 3, 1, 1),
                               instance_norm(channels)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }

 private:
  nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

}  // namespace

void GeneratorSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || downsamples < 0 ||
      residual_blocks < 0 || base_width < 1) {
    throw std::invalid_argument("invalid generator spec");
  }
}

GeneratorImpl::GeneratorImpl(const GeneratorSpec& spec) : spec_(spec) {
  spec_.validate();
  const int w = spec.base_width;
  head_ = register_module(
      "head", nn::Sequential(conv(spec.in_channels, w, 7, 1, 3),
                             instance_norm(w), nn::ReLU()));
  down_ = register_module("down", nn::ModuleList());
  int ch = w;
  for (int i = 0; i < spec.downsamples; ++i) {
    down_->push_back(nn::Sequential(conv(ch, ch * 2, 3, 2, 1),
                                    instance_norm(ch * 2), nn::ReLU()));
    ch *= 2;
  }
  blocks_ = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < spec.residual_blocks; ++i) {
    blocks_->push_back(ResidualBlock(ch));
  }
  up_ = register_module("up", nn::ModuleList());
  for (int i = 0; i < spec.downsamples; ++i) {
    up_->push_back(nn::Sequential(
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, ch / 2, 3)
                                .stride(2)
                                .padding(1)
                                .output_padding(1)),
        instance_norm(ch / 2), nn::ReLU()));
    ch /= 2;
  }
  tail_ = register_module(
      "tail", nn::Sequential(conv(ch, spec.out_channels, 7, 1, 3), nn::Tanh()));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& input) {
  if (input.dim() != 4 || input.size(1) != spec_.in_channels) {
    throw std::invalid_argument("generator expects [N, " +
                                std::to_string(spec_.in_channels) +
                                ", H, W] input");
  }
  const int64_t height = input.size(2);
  const int64_t width = input.size(3);
  const int64_t unit = int64_t{1} << spec_.downsamples;
  const int64_t pad_h = (unit - height % unit) % unit;
  const int64_t pad_w = (unit - width % unit) % unit;
  torch::Tensor x = input;
  if (pad_h != 0 || pad_w != 0) {
    x = F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  }
  x = head_->forward(x);
  for (const auto& stage : *down_) x = stage->as<nn::Sequential>()->forward(x);
  for (const auto& block : *blocks_) x = block->as<ResidualBlock>()->forward(x);
  for (const auto& stage : *up_) x = stage->as<nn::Sequential>()->forward(x);
  x = tail_->forward(x);
  if (pad_h != 0 || pad_w != 0) {
    using torch::indexing::Slice;
    x = x.index({Slice(), Slice(), Slice(0, height), Slice(0, width)});
  }
  return x;
}

void DiscriminatorSpec::validate() const {
  if (candidate_channels < 1 || condition_channels < 0 || width < 1 ||
      layers < 2) {
    throw std::invalid_argument("invalid discriminator spec");
  }
}

namespace {

int layer_stride(int index) { return index < 2 ? 2 : 1; }
constexpr int kDiscKernel = 3;

}  // namespace

int DiscriminatorSpec::min_input_side() const {
  int field = 1;
  for (int i = layers - 1; i >= 0; --i) {
    field = (field - 1) * layer_stride(i) + kDiscKernel;
  }
  return field;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorSpec& spec)
    : spec_(spec) {
  spec_.validate();
  convs_ = register_module("convs", nn::ModuleList());
  int in = spec.candidate_channels + spec.condition_channels;
  for (int i = 0; i < spec.layers; ++i) {
    const bool last = i + 1 == spec.layers;
    const int out = last ? 1 : spec.width * (1 << std::min(i, 2));
    convs_->push_back(conv(in, out, kDiscKernel, layer_stride(i), 0));
    in = out;
  }
}

DiscriminatorOutput PatchDiscriminatorImpl::forward(
    const torch::Tensor& candidate, const torch::Tensor& condition) {
  if (candidate.dim() != 4 || candidate.size(1) != spec_.candidate_channels) {
    throw std::invalid_argument("discriminator candidate has wrong shape");
  }
  if (condition.dim() != 4 || condition.size(1) != spec_.condition_channels ||
      condition.size(0) != candidate.size(0) ||
      condition.size(2) != candidate.size(2) ||
      condition.size(3) != candidate.size(3)) {
    throw std::invalid_argument(
        "discriminator condition is not aligned with the candidate");
  }
  torch::Tensor x = torch::cat({candidate, condition}, 1);
  const int64_t side = spec_.min_input_side();
  const int64_t pad_h = std::max<int64_t>(0, side - x.size(2));
  const int64_t pad_w = std::max<int64_t>(0, side - x.size(3));
  if (pad_h > 0 || pad_w > 0) {
    x = F::pad(x, F::PadFuncOptions({pad_w / 2, pad_w - pad_w / 2, pad_h / 2,
                                     pad_h - pad_h / 2}));
  }
  DiscriminatorOutput out;
  const std::size_t count = convs_->size();
  for (std::size_t i = 0; i < count; ++i) {
    x = convs_[i]->as<nn::Conv2d>()->forward(x);
    if (i + 1 < count) x = F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.features.push_back(x);
  }
  out.scores = torch::sigmoid(x);
  return out;
}

std::vector<double> default_perceptual_weights() {
  return {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};
}

namespace {

at::Generator seeded_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace

RandomPyramidEncoder::RandomPyramidEncoder(const EncoderSpec& spec)
    : weights_(spec.weights) {
  constexpr int kStages = 5;
  if (weights_.size() != kStages) {
    throw std::invalid_argument("random pyramid encoder has 5 taps");
  }
  stages_ = nn::ModuleList();
  const int widths[kStages] = {8, 16, 32, 32, 32};
  int in = 3;
  for (int i = 0; i < kStages; ++i) {
    stages_->push_back(conv(in, widths[i], 3, i == 0 ? 1 : 2, 1));
    in = widths[i];
  }
  auto gen = seeded_generator(spec.seed);
  torch::NoGradGuard no_grad;
  for (const auto& stage : *stages_) {
    auto* c = stage->as<nn::Conv2d>();
    const double fan_in =
        static_cast<double>(c->weight.size(1) * c->weight.size(2) * c->weight.size(3));
    c->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    c->bias.zero_();
    c->weight.set_requires_grad(false);
    c->bias.set_requires_grad(false);
  }
}

std::vector<torch::Tensor> RandomPyramidEncoder::taps(const torch::Tensor& images) {
  std::vector<torch::Tensor> out;
  torch::Tensor x = images;
  for (const auto& stage : *stages_) {
    x = F::leaky_relu(stage->as<nn::Conv2d>()->forward(x),
                      F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.push_back(x);
  }
  return out;
}

void RandomPyramidEncoder::to(torch::ScalarType dtype) { stages_->to(dtype); }

std::vector<torch::Tensor> RandomPyramidEncoder::parameters() const {
  return stages_->parameters();
}

namespace {

class ScriptedEncoder : public FeatureExtractor {
 public:
  ScriptedEncoder(torch::jit::script::Module module, std::vector<double> weights)
      : module_(std::move(module)), weights_(std::move(weights)) {
    module_.eval();
    for (auto p : module_.parameters()) p.set_requires_grad(false);
  }

  std::vector<torch::Tensor> taps(const torch::Tensor& images) override {
    auto result = module_.forward({images});
    std::vector<torch::Tensor> out;
    if (result.isTuple()) {
      for (const auto& v : result.toTupleRef().elements()) out.push_back(v.toTensor());
    } else if (result.isList()) {
      for (const auto& v : result.toListRef()) out.push_back(v.toTensor());
    } else {
      throw std::runtime_error("scripted encoder must return a list of tensors");
    }
    if (out.size() != weights_.size()) {
      throw std::runtime_error("scripted encoder tap count does not match weights");
    }
    return out;
  }
  const std::vector<double>& weights() const override { return weights_; }
  void to(torch::ScalarType dtype) override { module_.to(dtype); }
  std::vector<torch::Tensor> parameters() const override {
    std::vector<torch::Tensor> out;
    for (auto p : module_.parameters()) out.push_back(p);
    return out;
  }

 private:
  mutable torch::jit::script::Module module_;
  std::vector<double> weights_;
};

}  // namespace

std::unique_ptr<FeatureExtractor> load_scripted_encoder(
    const std::filesystem::path& path, std::vector<double> weights) {
  return std::make_unique<ScriptedEncoder>(torch::jit::load(path.string()),
                                           std::move(weights));
}

void init_gan_weights(nn::Module& module, std::uint64_t seed) {
  auto gen = seeded_generator(seed);
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      p.zero_();
    } else {
      p.normal_(0.0, 0.02, gen);
    }
  }
}

void to_json(nlohmann::json& j, const GeneratorSpec& spec) {
  j = {{"in_channels", spec.in_channels},
       {"out_channels", spec.out_channels},
       {"downsamples", spec.downsamples},
       {"residual_blocks", spec.residual_blocks},
       {"base_width", spec.base_width}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& spec) {
  spec.in_channels = j.value("in_channels", spec.in_channels);
  spec.out_channels = j.value("out_channels", spec.out_channels);
  spec.downsamples = j.value("downsamples", spec.downsamples);
  spec.residual_blocks = j.value("residual_blocks", spec.residual_blocks);
  spec.base_width = j.value("base_width", spec.base_width);
}

void to_json(nlohmann::json& j, const DiscriminatorSpec& spec) {
  j = {{"candidate_channels", spec.candidate_channels},
       {"condition_channels", spec.condition_channels},
       {"width", spec.width},
       {"layers", spec.layers}};
}

void from_json(const nlohmann::json& j, DiscriminatorSpec& spec) {
  spec.candidate_channels = j.value("candidate_channels", spec.candidate_channels);
  spec.condition_channels = j.value("condition_channels", spec.condition_channels);
  spec.width = j.value("width", spec.width);
  spec.layers = j.value("layers", spec.layers);
}

}  // namespace segedit

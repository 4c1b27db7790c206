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

#ifndef SEGEDIT_TRAINING_HPP_
#define SEGEDIT_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "segedit/data.hpp"
#include "segedit/losses.hpp"
#include "segedit/networks.hpp"

namespace segedit {

/// basic: global objective only. gl: global + one local discriminator on the
/// box crop, realized as mex with q = 0. mex / a-mex: global + cropped /
/// uncropped expansion term. gl-a-mex: gl plus the uncropped expansion term.
enum class Variant { basic, gl, mex, a_mex, gl_a_mex };

std::string to_string(Variant variant);
Variant variant_from_string(const std::string& text);

struct TrainConfig {
  std::filesystem::path dataset;
  Task task = Task::segmentation;
  Variant variant = Variant::mex;
  int epochs = 200;
  int decay_start = 100;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 4;
  LossWeights weights;
  double local_weight = 1.0;
  AdversarialForm form = AdversarialForm::standard;
  std::uint64_t seed = 0;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  EncoderSpec encoder;
  /// TorchScript feature network replacing the random pyramid encoder.
  std::string encoder_script;
  /// Save a checkpoint every this many epochs (the last epoch always saves).
  int checkpoint_every = 10;
  /// Evaluate on the test split every this many epochs; 0 disables.
  int eval_every = 0;

  void validate() const;
  /// Schedule and loss selection after applying the variant's aliasing.
  ExpansionSchedule effective_schedule() const;
  ObjectiveConfig objective() const;
  /// Number of expansion discriminators the variant instantiates.
  int expansion_discriminators() const;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
/// Fields missing from `j` keep the values already in `config`.
void merge_json(const nlohmann::json& j, TrainConfig& config);

/// Learning rate for a 0-based epoch: constant until decay_start, then linear
/// down to 0 at `epochs`. Throws std::out_of_range outside [0, epochs].
double lr_at(int epoch, const TrainConfig& config);

/// Tensors for one batch. Color maps are in [-1, 1].
struct Batch {
  torch::Tensor input;         // generator input
  torch::Tensor condition;     // discriminator condition
  torch::Tensor ground_truth;  // [N, 3, H, W]
  torch::Tensor context;       // [N, 3, H, W]
  torch::Tensor mask;          // [N, 1, H, W]
  std::vector<Box> boxes;
};

/// [3, H, W] float tensor in [-1, 1].
torch::Tensor raster_to_tensor(const Raster& rgb);
/// Rounds back to 8-bit.
Raster tensor_to_raster(const torch::Tensor& color_map);
/// [K, H, W] one-hot over the palette's channel order.
torch::Tensor one_hot(const LabelMap& labels, const ColorPalette& palette);

Batch make_batch(std::span<const TrainingTriple> triples,
                 const ColorPalette& palette, Task task);

/// Generator input channels for a task.
int generator_channels(Task task, const ColorPalette& palette);
int condition_channels(Task task, const ColorPalette& palette);

/// Initial color map from the one-hot incomplete map and the mask channel.
torch::Tensor generator_forward(Generator& generator,
                                const torch::Tensor& incomplete_one_hot,
                                const torch::Tensor& mask_channel);

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::int64_t step, std::map<std::string, double> losses);
  std::int64_t step() const { return step_; }
  const std::map<std::string, double>& losses() const { return losses_; }

 private:
  std::int64_t step_;
  std::map<std::string, double> losses_;
};

struct StepReport {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  std::map<std::string, double> losses;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  Rng rng;
};

/// Owns the generator, all discriminators, the frozen encoder and both
/// optimizers. Each train_step does one discriminator update followed by one
/// generator update.
class Trainer {
 public:
  Trainer(TrainConfig config, ColorPalette palette);

  StepReport train_step(std::span<const TrainingTriple> batch);
  /// Sets both optimizers' learning rate to lr_at(epoch).
  void begin_epoch(int epoch);

  const TrainConfig& config() const { return config_; }
  const ColorPalette& palette() const { return palette_; }
  TrainState& state() { return state_; }
  Generator& generator() { return generator_; }
  GanModels& discriminators() { return models_; }
  FeatureExtractor& encoder() { return *encoder_; }
  std::vector<torch::Tensor> discriminator_parameters() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path);

 private:
  void set_discriminators_trainable(bool on);

  TrainConfig config_;
  ColorPalette palette_;
  TrainState state_;
  Generator generator_{nullptr};
  GanModels models_;
  std::unique_ptr<FeatureExtractor> encoder_;
  std::unique_ptr<torch::optim::Adam> optim_g_;
  std::unique_ptr<torch::optim::Adam> optim_d_;
  double current_lr_ = 0.0;
};

inline constexpr std::int64_t kCheckpointVersion = 1;

struct RunOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Called after every epoch with the number of completed epochs.
  std::function<void(int, Trainer&)> on_epoch_end;
  /// Stop after this many epochs of this invocation (resume tests).
  std::optional<int> stop_after_epochs;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  std::int64_t steps = 0;
};

/// Trains on `train_set` and writes <out>/config.json, <out>/log.jsonl (one
/// object per step) and <out>/checkpoints/epoch_N (N = completed epochs;
/// epoch_0 is the untrained model). On a non-finite loss a snapshot
/// <out>/checkpoints/nonfinite_step_S is written and the error rethrown.
RunResult run_training(const Dataset& train_set, const TrainConfig& config,
                       const std::filesystem::path& out_dir,
                       const RunOptions& options = {});

/// Inference-only view of a checkpoint.
struct EditModel {
  TrainConfig config;
  ColorPalette palette;
  Generator generator{nullptr};
};

EditModel load_edit_model(const std::filesystem::path& checkpoint);
EditModel edit_model_from(Trainer& trainer);

struct EditOutcome {
  torch::Tensor fused;  // [3, H, W] in [-1, 1]
  Raster manipulated_color;
  LabelMap manipulated_labels;
};

/// incomplete map -> generator -> fuse -> 8-bit color -> nearest-color labels.
EditOutcome run_edit(EditModel& model, const LabelMap& complete,
                     const EditBox& box);

/// Same pipeline for a triple already built for the model's task.
EditOutcome run_triple(EditModel& model, const TrainingTriple& triple);

}  // namespace segedit

#endif  // SEGEDIT_TRAINING_HPP_

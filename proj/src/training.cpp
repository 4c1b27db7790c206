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

#include "segedit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace segedit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::basic: return "basic";
    case Variant::gl: return "gl";
    case Variant::mex: return "mex";
    case Variant::a_mex: return "a-mex";
    case Variant::gl_a_mex: return "gl-a-mex";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& text) {
  for (auto v : {Variant::basic, Variant::gl, Variant::mex, Variant::a_mex,
                 Variant::gl_a_mex}) {
    if (to_string(v) == text) return v;
  }
  throw std::invalid_argument("unknown variant '" + text +
                              "' (expected basic, gl, mex, a-mex, gl-a-mex)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (decay_start < 0 || decay_start > epochs) {
    throw std::invalid_argument("decay_start must lie in [0, epochs]");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (checkpoint_every < 1) {
    throw std::invalid_argument("checkpoint_every must be >= 1");
  }
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  weights.validate();
  objective().validate();
  generator.validate();
  discriminator.validate();
}

ExpansionSchedule TrainConfig::effective_schedule() const {
  ExpansionSchedule s = weights.schedule;
  switch (variant) {
    case Variant::gl:
      s.q = 0;
      s.cropped = true;
      break;
    case Variant::mex:
      s.cropped = true;
      break;
    case Variant::a_mex:
    case Variant::gl_a_mex:
      s.cropped = false;
      break;
    case Variant::basic:
      break;
  }
  return s;
}

ObjectiveConfig TrainConfig::objective() const {
  ObjectiveConfig o;
  o.mex = variant == Variant::gl || variant == Variant::mex;
  o.a_mex = variant == Variant::a_mex || variant == Variant::gl_a_mex;
  o.local_term = variant == Variant::gl_a_mex;
  o.local_weight = local_weight;
  o.form = form;
  return o;
}

int TrainConfig::expansion_discriminators() const {
  const auto o = objective();
  if (o.mex) return effective_schedule().q + 1;
  if (o.a_mex) return 1;
  return 0;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{
      {"dataset", c.dataset.string()},
      {"task", to_string(c.task)},
      {"variant", to_string(c.variant)},
      {"epochs", c.epochs},
      {"decay_start", c.decay_start},
      {"lr", c.lr},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"batch_size", c.batch_size},
      {"lambda1", c.weights.lambda1},
      {"lambda2", c.weights.lambda2},
      {"lambda3", c.weights.lambda3},
      {"lambda4", c.weights.lambda4},
      {"q", c.weights.schedule.q},
      {"alpha", c.weights.schedule.alpha},
      {"beta", c.weights.schedule.beta},
      {"local_weight", c.local_weight},
      {"adversarial_form",
       c.form == AdversarialForm::literal ? "literal" : "standard"},
      {"seed", c.seed},
      {"generator", c.generator},
      {"discriminator", c.discriminator},
      {"encoder_seed", c.encoder.seed},
      {"perceptual_weights", c.encoder.weights},
      {"encoder_script", c.encoder_script},
      {"checkpoint_every", c.checkpoint_every},
      {"eval_every", c.eval_every},
  };
}

void merge_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {
      "dataset", "task", "variant", "epochs", "decay_start", "lr", "beta1",
      "beta2", "batch_size", "lambda1", "lambda2", "lambda3", "lambda4", "q",
      "alpha", "beta", "local_weight", "adversarial_form", "seed", "generator",
      "discriminator", "encoder_seed", "perceptual_weights", "encoder_script",
      "checkpoint_every", "eval_every", "palette"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
  if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
  if (j.contains("variant")) {
    c.variant = variant_from_string(j.at("variant").get<std::string>());
  }
  get("epochs", c.epochs);
  get("decay_start", c.decay_start);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("batch_size", c.batch_size);
  get("lambda1", c.weights.lambda1);
  get("lambda2", c.weights.lambda2);
  get("lambda3", c.weights.lambda3);
  get("lambda4", c.weights.lambda4);
  get("q", c.weights.schedule.q);
  get("alpha", c.weights.schedule.alpha);
  get("beta", c.weights.schedule.beta);
  get("local_weight", c.local_weight);
  if (j.contains("adversarial_form")) {
    const auto form = j.at("adversarial_form").get<std::string>();
    if (form == "standard") {
      c.form = AdversarialForm::standard;
    } else if (form == "literal") {
      c.form = AdversarialForm::literal;
    } else {
      throw std::invalid_argument("adversarial_form must be standard or literal");
    }
  }
  get("seed", c.seed);
  get("generator", c.generator);
  get("discriminator", c.discriminator);
  get("encoder_seed", c.encoder.seed);
  get("perceptual_weights", c.encoder.weights);
  get("encoder_script", c.encoder_script);
  get("checkpoint_every", c.checkpoint_every);
  get("eval_every", c.eval_every);
}

double lr_at(int epoch, const TrainConfig& c) {
  if (epoch < 0 || epoch > c.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) +
                            " outside [0, " + std::to_string(c.epochs) + "]");
  }
  if (epoch < c.decay_start) return c.lr;
  if (c.epochs == c.decay_start) return 0.0;
  return c.lr * static_cast<double>(c.epochs - epoch) /
         static_cast<double>(c.epochs - c.decay_start);
}

torch::Tensor raster_to_tensor(const Raster& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("expected an RGB raster");
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(rgb.pixels.data()),
                                {rgb.height, rgb.width, 3}, torch::kUInt8);
  return bytes.permute({2, 0, 1}).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

Raster tensor_to_raster(const torch::Tensor& color_map) {
  if (color_map.dim() != 3 || color_map.size(0) != 3) {
    throw std::invalid_argument("expected a [3, H, W] color map");
  }
  auto bytes = color_map.detach()
                   .to(torch::kDouble)
                   .add(1.0)
                   .mul(127.5)
                   .round()
                   .clamp(0, 255)
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  Raster out;
  out.height = static_cast<int>(color_map.size(1));
  out.width = static_cast<int>(color_map.size(2));
  out.channels = 3;
  out.pixels.assign(bytes.data_ptr<std::uint8_t>(),
                    bytes.data_ptr<std::uint8_t>() + bytes.numel());
  return out;
}

torch::Tensor one_hot(const LabelMap& labels, const ColorPalette& palette) {
  const auto k = static_cast<int64_t>(palette.size());
  auto out = torch::zeros({k, labels.height, labels.width});
  auto acc = out.accessor<float, 3>();
  for (int r = 0; r < labels.height; ++r) {
    for (int c = 0; c < labels.width; ++c) {
      const int id = labels.at(r, c);
      if (palette.contains(id)) acc[palette.channel_of(id)][r][c] = 1.0f;
    }
  }
  return out;
}

int generator_channels(Task task, const ColorPalette& palette) {
  return task == Task::inpainting ? 4 : static_cast<int>(palette.size()) + 1;
}

int condition_channels(Task task, const ColorPalette& palette) {
  return task == Task::inpainting ? 4 : static_cast<int>(palette.size());
}

Batch make_batch(std::span<const TrainingTriple> triples,
                 const ColorPalette& palette, Task task) {
  if (triples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int h = triples.front().incomplete.height;
  const int w = triples.front().incomplete.width;
  std::vector<torch::Tensor> inputs, conditions, truths, contexts, masks;
  Batch batch;
  for (const auto& t : triples) {
    if (t.incomplete.height != h || t.incomplete.width != w) {
      throw std::invalid_argument("make_batch: samples differ in size");
    }
    auto mask = t.mask.to_tensor().unsqueeze(0);
    auto truth = raster_to_tensor(t.ground_truth_color);
    auto context = raster_to_tensor(t.context_color);
    if (task == Task::inpainting) {
      auto input = torch::cat({context * (1 - mask), mask});
      inputs.push_back(input);
      conditions.push_back(input);
    } else {
      auto hot = one_hot(t.incomplete, palette);
      inputs.push_back(torch::cat({hot, mask}));
      conditions.push_back(hot);
    }
    truths.push_back(truth);
    contexts.push_back(context);
    masks.push_back(mask);
    batch.boxes.push_back(t.box.corners);
  }
  batch.input = torch::stack(inputs);
  batch.condition = torch::stack(conditions);
  batch.ground_truth = torch::stack(truths);
  batch.context = torch::stack(contexts);
  batch.mask = torch::stack(masks);
  return batch;
}

torch::Tensor generator_forward(Generator& generator,
                                const torch::Tensor& incomplete_one_hot,
                                const torch::Tensor& mask_channel) {
  return generator->forward(torch::cat({incomplete_one_hot, mask_channel}, 1));
}

namespace {

std::string describe(const std::map<std::string, double>& losses) {
  std::ostringstream out;
  for (const auto& [k, v] : losses) out << ' ' << k << '=' << v;
  return out.str();
}

void check_finite(double value, std::int64_t step,
                  const std::map<std::string, double>& components) {
  bool ok = std::isfinite(value);
  for (const auto& [k, v] : components) ok = ok && std::isfinite(v);
  if (!ok) throw NonFiniteLossError(step, components);
}

std::unique_ptr<FeatureExtractor> make_encoder(const TrainConfig& c) {
  if (!c.encoder_script.empty()) {
    return load_scripted_encoder(c.encoder_script, c.encoder.weights);
  }
  return std::make_unique<RandomPyramidEncoder>(c.encoder);
}

void set_lr(torch::optim::Adam& optim, double lr) {
  for (auto& group : optim.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

}  // namespace

NonFiniteLossError::NonFiniteLossError(std::int64_t step,
                                       std::map<std::string, double> losses)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) + ":" +
                         describe(losses)),
      step_(step),
      losses_(std::move(losses)) {}

Trainer::Trainer(TrainConfig config, ColorPalette palette)
    : config_(std::move(config)), palette_(std::move(palette)) {
  config_.generator.in_channels = generator_channels(config_.task, palette_);
  config_.generator.out_channels = 3;
  config_.discriminator.candidate_channels = 3;
  config_.discriminator.condition_channels =
      condition_channels(config_.task, palette_);
  config_.validate();
  state_.rng.seed(config_.seed);

  generator_ = Generator(config_.generator);
  init_gan_weights(*generator_, config_.seed);
  models_.global = PatchDiscriminator(config_.discriminator);
  init_gan_weights(*models_.global, config_.seed + 1);
  for (int j = 0; j < config_.expansion_discriminators(); ++j) {
    PatchDiscriminator d(config_.discriminator);
    init_gan_weights(*d, config_.seed + 10 + j);
    models_.expansion.push_back(d);
  }
  if (config_.objective().local_term) {
    models_.local = PatchDiscriminator(config_.discriminator);
    init_gan_weights(*models_.local, config_.seed + 5);
  }
  encoder_ = make_encoder(config_);
  models_.encoder = encoder_.get();

  current_lr_ = lr_at(0, config_);
  const auto options = torch::optim::AdamOptions(current_lr_)
                           .betas({config_.beta1, config_.beta2});
  optim_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), options);
  optim_d_ = std::make_unique<torch::optim::Adam>(discriminator_parameters(), options);
}

std::vector<torch::Tensor> Trainer::discriminator_parameters() const {
  auto params = models_.global->parameters();
  for (const auto& d : models_.expansion) {
    auto p = d->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  if (models_.local) {
    auto p = models_.local->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

void Trainer::set_discriminators_trainable(bool on) {
  for (auto& p : discriminator_parameters()) p.requires_grad_(on);
}

void Trainer::begin_epoch(int epoch) {
  current_lr_ = lr_at(epoch, config_);
  set_lr(*optim_g_, current_lr_);
  set_lr(*optim_d_, current_lr_);
}

StepReport Trainer::train_step(std::span<const TrainingTriple> triples) {
  const auto batch = make_batch(triples, palette_, config_.task);
  LossWeights weights = config_.weights;
  weights.schedule = config_.effective_schedule();
  const auto objective = config_.objective();

  generator_->train();
  const auto initial = generator_->forward(batch.input);
  const GanInputs inputs{initial,         batch.ground_truth, batch.context,
                         batch.condition, batch.mask,         batch.boxes};

  set_discriminators_trainable(true);
  optim_d_->zero_grad();
  auto d = mexgan_loss(inputs, weights, objective, models_, LossSide::discriminator);
  const double d_total = d.discriminator.item<double>();
  check_finite(d_total, state_.step, d.components);
  d.discriminator.backward();
  optim_d_->step();

  set_discriminators_trainable(false);
  optim_g_->zero_grad();
  auto g = mexgan_loss(inputs, weights, objective, models_, LossSide::generator);
  const double g_total = g.generator.item<double>();
  check_finite(g_total, state_.step, g.components);
  g.generator.backward();
  optim_g_->step();
  set_discriminators_trainable(true);

  StepReport report;
  report.step = state_.step++;
  report.epoch = state_.epoch;
  report.lr = current_lr_;
  report.losses = g.components;
  report.losses.insert(d.components.begin(), d.components.end());
  report.losses["loss_g"] = g_total;
  report.losses["loss_d"] = d_total;
  return report;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  json config_json = config_;
  config_json["palette"] = palette_;
  std::ostringstream rng_state;
  rng_state << state_.rng;
  const json state_json = {
      {"epoch", state_.epoch}, {"step", state_.step}, {"rng", rng_state.str()}};

  torch::serialize::OutputArchive archive;
  archive.write("version", c10::IValue(kCheckpointVersion));
  archive.write("config", c10::IValue(config_json.dump()));
  archive.write("state", c10::IValue(state_json.dump()));
  auto add = [&archive](const std::string& key, const torch::nn::Module& m) {
    torch::serialize::OutputArchive sub;
    m.save(sub);
    archive.write(key, sub);
  };
  add("generator", *generator_);
  add("global_disc", *models_.global);
  for (std::size_t j = 0; j < models_.expansion.size(); ++j) {
    add("expansion_" + std::to_string(j), *models_.expansion[j]);
  }
  if (models_.local) add("local", *models_.local);
  torch::serialize::OutputArchive og, od;
  optim_g_->save(og);
  optim_d_->save(od);
  archive.write("optim_g", og);
  archive.write("optim_d", od);

  fs::create_directories(path.parent_path().empty() ? fs::path(".")
                                                    : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

namespace {

struct CheckpointHeader {
  TrainConfig config;
  ColorPalette palette;
  json state;
};

CheckpointHeader read_header(torch::serialize::InputArchive& archive,
                             const fs::path& path) {
  c10::IValue version, config, state;
  archive.read("version", version);
  const auto v = version.toInt();
  if (v < 1 || v > kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                             std::to_string(v));
  }
  archive.read("config", config);
  archive.read("state", state);
  CheckpointHeader header;
  auto config_json = json::parse(config.toStringRef());
  header.palette = palette_from_json(config_json.at("palette"));
  merge_json(config_json, header.config);
  header.state = json::parse(state.toStringRef());
  return header;
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) {
    throw std::runtime_error("checkpoint not found: " + path.string());
  }
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return archive;
}

void load_module(torch::serialize::InputArchive& archive, const std::string& key,
                 torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  archive.read(key, sub);
  module.load(sub);
}

}  // namespace

Trainer Trainer::load_checkpoint(const fs::path& path) {
  auto archive = open_archive(path);
  auto header = read_header(archive, path);
  Trainer trainer(header.config, header.palette);
  load_module(archive, "generator", *trainer.generator_);
  load_module(archive, "global_disc", *trainer.models_.global);
  for (std::size_t j = 0; j < trainer.models_.expansion.size(); ++j) {
    load_module(archive, "expansion_" + std::to_string(j),
                *trainer.models_.expansion[j]);
  }
  if (trainer.models_.local) load_module(archive, "local", *trainer.models_.local);
  torch::serialize::InputArchive og, od;
  archive.read("optim_g", og);
  archive.read("optim_d", od);
  trainer.optim_g_->load(og);
  trainer.optim_d_->load(od);

  trainer.state_.epoch = header.state.at("epoch").get<int>();
  trainer.state_.step = header.state.at("step").get<std::int64_t>();
  std::istringstream rng_state(header.state.at("rng").get<std::string>());
  rng_state >> trainer.state_.rng;
  trainer.begin_epoch(std::min(trainer.state_.epoch, trainer.config_.epochs));
  return trainer;
}

RunResult run_training(const Dataset& train_set, const TrainConfig& config,
                       const fs::path& out_dir, const RunOptions& options) {
  if (train_set.samples.empty()) {
    throw std::invalid_argument("training set is empty");
  }
  const fs::path ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  auto checkpoint_path = [&](int epoch) {
    return ckpt_dir / ("epoch_" + std::to_string(epoch));
  };

  Trainer trainer = options.resume_from
                        ? Trainer::load_checkpoint(*options.resume_from)
                        : Trainer(config, train_set.palette);
  RunResult result;
  result.log = out_dir / "log.jsonl";
  if (!options.resume_from) {
    json snapshot = trainer.config();
    snapshot["palette"] = trainer.palette();
    std::ofstream(out_dir / "config.json") << snapshot.dump(2) << '\n';
    trainer.save_checkpoint(checkpoint_path(0));
    std::ofstream(result.log, std::ios::trunc);
  }
  std::ofstream log(result.log, std::ios::app);
  result.final_checkpoint = checkpoint_path(trainer.state().epoch);

  const TrainConfig& cfg = trainer.config();
  const Task task = cfg.task;
  auto& state = trainer.state();
  int ran = 0;
  while (state.epoch < cfg.epochs) {
    if (options.stop_after_epochs && ran >= *options.stop_after_epochs) break;
    const int epoch = state.epoch;
    trainer.begin_epoch(epoch);

    std::vector<std::size_t> order(train_set.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
    std::vector<TrainingTriple> triples;
    for (auto idx : order) {
      const auto& sample = train_set.samples[idx];
      if (auto box = sample_box(sample.labels, train_set.spec, state.rng)) {
        triples.push_back(make_triple(sample, *box, trainer.palette(), task));
      }
    }
    for (std::size_t start = 0; start < triples.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto count = std::min<std::size_t>(cfg.batch_size, triples.size() - start);
      StepReport report;
      try {
        report = trainer.train_step(
            std::span<const TrainingTriple>(triples).subspan(start, count));
      } catch (const NonFiniteLossError& e) {
        trainer.save_checkpoint(ckpt_dir /
                                ("nonfinite_step_" + std::to_string(e.step())));
        throw;
      }
      json line = {{"step", report.step}, {"epoch", report.epoch}, {"lr", report.lr}};
      for (const auto& [k, v] : report.losses) line[k] = v;
      log << line.dump() << '\n';
      ++result.steps;
    }
    log.flush();
    state.epoch = epoch + 1;
    ++ran;
    const bool last = state.epoch == cfg.epochs ||
                      (options.stop_after_epochs && ran >= *options.stop_after_epochs);
    if (last || state.epoch % cfg.checkpoint_every == 0) {
      result.final_checkpoint = checkpoint_path(state.epoch);
      trainer.save_checkpoint(result.final_checkpoint);
    }
    if (options.on_epoch_end) options.on_epoch_end(state.epoch, trainer);
  }
  return result;
}

EditModel load_edit_model(const fs::path& checkpoint) {
  auto archive = open_archive(checkpoint);
  auto header = read_header(archive, checkpoint);
  EditModel model;
  model.palette = header.palette;
  model.config = header.config;
  model.generator = Generator(model.config.generator);
  load_module(archive, "generator", *model.generator);
  model.generator->eval();
  return model;
}

EditModel edit_model_from(Trainer& trainer) {
  EditModel model;
  model.config = trainer.config();
  model.palette = trainer.palette();
  model.generator = trainer.generator();
  return model;
}

EditOutcome run_triple(EditModel& model, const TrainingTriple& triple) {
  torch::NoGradGuard no_grad;
  const bool was_training = model.generator->is_training();
  if (was_training) model.generator->eval();
  const auto batch = make_batch(std::span<const TrainingTriple>(&triple, 1),
                                model.palette, model.config.task);
  auto initial = model.generator->forward(batch.input);
  if (was_training) model.generator->train();

  EditOutcome out;
  out.fused = fuse(initial, batch.context, batch.mask)[0];
  out.manipulated_color = tensor_to_raster(out.fused);
  if (model.config.task == Task::segmentation) {
    out.manipulated_labels = color_decode(out.manipulated_color, model.palette);
  }
  return out;
}

EditOutcome run_edit(EditModel& model, const LabelMap& complete,
                     const EditBox& box) {
  if (model.config.task != Task::segmentation) {
    throw std::invalid_argument("run_edit needs a segmentation model");
  }
  if (!model.palette.contains(box.target_label)) {
    throw std::invalid_argument("target label " + std::to_string(box.target_label) +
                                " is not in the palette");
  }
  Sample sample{"edit", complete, std::nullopt};
  return run_triple(model, make_triple(sample, box, model.palette));
}

}  // namespace segedit

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

#include "segedit/losses.hpp"

#include <stdexcept>

namespace segedit {

torch::Tensor clamp_scores(const torch::Tensor& scores) {
  return scores.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
}

namespace {

void require_nonempty(const torch::Tensor& scores, const char* what) {
  if (!scores.defined() || scores.numel() == 0) {
    throw std::invalid_argument(std::string(what) + ": empty score field");
  }
}

bool wants_generator(LossSide side) { return side != LossSide::discriminator; }
bool wants_discriminator(LossSide side) { return side != LossSide::generator; }

torch::Tensor zero_like_scalar(const torch::Tensor& like) {
  return torch::zeros({}, like.options().requires_grad(false));
}

}  // namespace

torch::Tensor generator_adversarial_term(const torch::Tensor& fake_scores,
                                         AdversarialForm form) {
  require_nonempty(fake_scores, "generator_adversarial_term");
  auto log_fake = torch::log(clamp_scores(fake_scores)).mean();
  if (form == AdversarialForm::literal) return 1.0 - log_fake;
  return -log_fake;
}

torch::Tensor discriminator_adversarial_term(const torch::Tensor& real_scores,
                                             const torch::Tensor& fake_scores,
                                             AdversarialForm form) {
  require_nonempty(real_scores, "discriminator_adversarial_term");
  require_nonempty(fake_scores, "discriminator_adversarial_term");
  auto log_real = torch::log(clamp_scores(real_scores)).mean();
  if (form == AdversarialForm::literal) {
    auto log_fake = torch::log(clamp_scores(fake_scores)).mean();
    return -(log_real + (1.0 - log_fake));
  }
  auto log_not_fake = torch::log(1.0 - clamp_scores(fake_scores)).mean();
  return -log_real - log_not_fake;
}

AdversarialTerms adversarial_loss(const torch::Tensor& real_scores,
                                  const torch::Tensor& fake_scores,
                                  AdversarialForm form) {
  return {generator_adversarial_term(fake_scores, form),
          discriminator_adversarial_term(real_scores, fake_scores, form)};
}

torch::Tensor feature_matching_loss(std::span<const torch::Tensor> real,
                                    std::span<const torch::Tensor> fake) {
  if (real.size() != fake.size() || real.empty()) {
    throw std::invalid_argument("feature_matching_loss: layer count mismatch");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (!real[i].sizes().equals(fake[i].sizes())) {
      throw std::invalid_argument("feature_matching_loss: layer " +
                                  std::to_string(i) + " shape mismatch");
    }
    // (1 / N_i) * ||real_i - fake_i||_1
    auto term = (real[i].detach() - fake[i]).abs().sum() /
                static_cast<double>(real[i].numel());
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor perceptual_loss(const torch::Tensor& generated,
                              const torch::Tensor& ground_truth,
                              FeatureExtractor& encoder) {
  if (!generated.sizes().equals(ground_truth.sizes())) {
    throw std::invalid_argument("perceptual_loss: image shapes differ");
  }
  const auto gen_taps = encoder.taps(generated);
  std::vector<torch::Tensor> gt_taps;
  {
    torch::NoGradGuard no_grad;
    gt_taps = encoder.taps(ground_truth);
  }
  const auto& w = encoder.weights();
  if (gen_taps.size() != w.size() || gt_taps.size() != w.size()) {
    throw std::invalid_argument("perceptual_loss: encoder tap mismatch");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto term = w[i] * (gen_taps[i] - gt_taps[i]).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  schedule.validate();
}

BasicLossResult basic_loss(const torch::Tensor& initial,
                           const torch::Tensor& ground_truth,
                           const torch::Tensor& condition,
                           const LossWeights& weights,
                           PatchDiscriminator& global,
                           FeatureExtractor& encoder, LossSide side,
                           AdversarialForm form) {
  if (!initial.sizes().equals(ground_truth.sizes())) {
    throw std::invalid_argument("basic_loss: output and ground truth differ");
  }
  weights.validate();
  BasicLossResult out;
  const auto zero = zero_like_scalar(initial);
  out.generator = out.adversarial = out.feature_matching = out.perceptual =
      out.discriminator = zero;

  DiscriminatorOutput real;
  {
    // real features only serve as targets on the generator side
    std::optional<torch::NoGradGuard> guard;
    if (!wants_discriminator(side)) guard.emplace();
    real = global->forward(ground_truth, condition);
  }
  if (wants_discriminator(side)) {
    auto fake_detached = global->forward(initial.detach(), condition);
    out.discriminator =
        discriminator_adversarial_term(real.scores, fake_detached.scores, form);
  }
  if (wants_generator(side)) {
    auto fake = global->forward(initial, condition);
    out.adversarial = generator_adversarial_term(fake.scores, form);
    out.feature_matching = feature_matching_loss(real.features, fake.features);
    out.perceptual = perceptual_loss(initial, ground_truth, encoder);
    out.generator = weights.lambda1 * out.adversarial +
                    weights.lambda2 * out.feature_matching +
                    weights.lambda3 * out.perceptual;
  }
  return out;
}

namespace {

void check_expansion_inputs(const ExpansionInputs& in) {
  if (in.manipulated.dim() != 4 ||
      !in.manipulated.sizes().equals(in.ground_truth.sizes())) {
    throw std::invalid_argument("expansion loss: image shapes differ");
  }
  if (in.condition.dim() != 4 || in.condition.size(0) != in.manipulated.size(0) ||
      in.condition.size(2) != in.manipulated.size(2) ||
      in.condition.size(3) != in.manipulated.size(3)) {
    throw std::invalid_argument("expansion loss: condition not aligned");
  }
  if (static_cast<int64_t>(in.boxes.size()) != in.manipulated.size(0)) {
    throw std::invalid_argument("expansion loss: one box per sample required");
  }
}

AdversarialTerms run_level(PatchDiscriminator& disc, const torch::Tensor& real,
                           const torch::Tensor& fake,
                           const torch::Tensor& condition, LossSide side,
                           AdversarialForm form) {
  AdversarialTerms terms{zero_like_scalar(fake), zero_like_scalar(fake)};
  if (wants_generator(side)) {
    terms.generator =
        generator_adversarial_term(disc->forward(fake, condition).scores, form);
  }
  if (wants_discriminator(side)) {
    auto real_scores = disc->forward(real, condition).scores;
    auto fake_scores = disc->forward(fake.detach(), condition).scores;
    terms.discriminator =
        discriminator_adversarial_term(real_scores, fake_scores, form);
  }
  return terms;
}

void accumulate(AdversarialTerms& into, const AdversarialTerms& term) {
  into.generator = into.generator + term.generator;
  into.discriminator = into.discriminator + term.discriminator;
}

AdversarialTerms sum_levels(const std::vector<AdversarialTerms>& levels) {
  AdversarialTerms total = levels.front();
  for (std::size_t j = 1; j < levels.size(); ++j) accumulate(total, levels[j]);
  return total;
}

}  // namespace

std::vector<AdversarialTerms> mex_level_terms(
    const ExpansionInputs& inputs, const ExpansionSchedule& schedule,
    std::span<PatchDiscriminator> discriminators, LossSide side,
    AdversarialForm form) {
  check_expansion_inputs(inputs);
  if (!schedule.cropped) {
    throw std::invalid_argument("mex_loss requires a cropped schedule");
  }
  if (discriminators.size() != static_cast<std::size_t>(schedule.q) + 1) {
    throw std::invalid_argument("mex_loss needs q+1 discriminators");
  }
  const int64_t batch = inputs.manipulated.size(0);
  std::vector<AdversarialTerms> levels(
      schedule.q + 1, AdversarialTerms{zero_like_scalar(inputs.manipulated),
                                       zero_like_scalar(inputs.manipulated)});
  for (int64_t b = 0; b < batch; ++b) {
    auto [truth, fake] =
        mex_areas(inputs.ground_truth[b], inputs.manipulated[b],
                  inputs.condition[b], inputs.boxes[b], schedule);
    for (int j = 0; j <= schedule.q; ++j) {
      accumulate(levels[j],
                 run_level(discriminators[j], truth.levels[j].area.unsqueeze(0),
                           fake.levels[j].area.unsqueeze(0),
                           fake.levels[j].condition.unsqueeze(0), side, form));
    }
  }
  for (auto& level : levels) {
    level.generator = level.generator / static_cast<double>(batch);
    level.discriminator = level.discriminator / static_cast<double>(batch);
  }
  return levels;
}

AdversarialTerms mex_loss(const ExpansionInputs& inputs,
                          const ExpansionSchedule& schedule,
                          std::span<PatchDiscriminator> discriminators,
                          LossSide side, AdversarialForm form) {
  return sum_levels(mex_level_terms(inputs, schedule, discriminators, side, form));
}

std::vector<AdversarialTerms> a_mex_level_terms(
    const ExpansionInputs& inputs, const ExpansionSchedule& schedule,
    PatchDiscriminator& shared, LossSide side, AdversarialForm form) {
  check_expansion_inputs(inputs);
  if (schedule.cropped) {
    throw std::invalid_argument("a_mex_loss requires an uncropped schedule");
  }
  const int64_t batch = inputs.manipulated.size(0);
  std::vector<std::vector<torch::Tensor>> truth(schedule.q + 1),
      fake(schedule.q + 1), cond(schedule.q + 1);
  for (int64_t b = 0; b < batch; ++b) {
    auto [t, f] = mex_areas(inputs.ground_truth[b], inputs.manipulated[b],
                            inputs.condition[b], inputs.boxes[b], schedule);
    for (int j = 0; j <= schedule.q; ++j) {
      truth[j].push_back(t.levels[j].area);
      fake[j].push_back(f.levels[j].area);
      cond[j].push_back(f.levels[j].condition);
    }
  }
  std::vector<AdversarialTerms> levels;
  for (int j = 0; j <= schedule.q; ++j) {
    levels.push_back(run_level(shared, torch::stack(truth[j]),
                               torch::stack(fake[j]), torch::stack(cond[j]),
                               side, form));
  }
  return levels;
}

AdversarialTerms a_mex_loss(const ExpansionInputs& inputs,
                            const ExpansionSchedule& schedule,
                            PatchDiscriminator& shared, LossSide side,
                            AdversarialForm form) {
  return sum_levels(a_mex_level_terms(inputs, schedule, shared, side, form));
}

AdversarialTerms local_adversarial_loss(const ExpansionInputs& inputs,
                                        PatchDiscriminator& local,
                                        LossSide side, AdversarialForm form) {
  check_expansion_inputs(inputs);
  const int64_t batch = inputs.manipulated.size(0);
  AdversarialTerms total{zero_like_scalar(inputs.manipulated),
                         zero_like_scalar(inputs.manipulated)};
  for (int64_t b = 0; b < batch; ++b) {
    const Box& box = inputs.boxes[b];
    accumulate(total,
               run_level(local, crop_box(inputs.ground_truth[b], box).region.unsqueeze(0),
                         crop_box(inputs.manipulated[b], box).region.unsqueeze(0),
                         crop_box(inputs.condition[b], box).region.unsqueeze(0),
                         side, form));
  }
  total.generator = total.generator / static_cast<double>(batch);
  total.discriminator = total.discriminator / static_cast<double>(batch);
  return total;
}

void ObjectiveConfig::validate() const {
  if (mex && a_mex) {
    throw std::invalid_argument(
        "cropped and uncropped expansion terms cannot both be enabled");
  }
  if (local_weight < 0) throw std::invalid_argument("local_weight must be >= 0");
}

ObjectiveResult mexgan_loss(const GanInputs& inputs, const LossWeights& weights,
                            const ObjectiveConfig& config, GanModels& models,
                            LossSide side) {
  config.validate();
  weights.validate();
  if (!models.global || models.encoder == nullptr) {
    throw std::invalid_argument("mexgan_loss: global discriminator and encoder required");
  }
  ObjectiveResult out;
  const auto basic =
      basic_loss(inputs.initial, inputs.ground_truth, inputs.condition, weights,
                 models.global, *models.encoder, side, config.form);
  out.generator = basic.generator;
  out.discriminator = basic.discriminator;
  if (wants_generator(side)) {
    out.components["adv"] = basic.adversarial.item<double>();
    out.components["fea"] = basic.feature_matching.item<double>();
    out.components["pec"] = basic.perceptual.item<double>();
  }
  if (wants_discriminator(side)) {
    out.components["disc_global"] = basic.discriminator.item<double>();
  }
  if (!config.mex && !config.a_mex && !config.local_term) return out;

  const auto initial = side == LossSide::discriminator ? inputs.initial.detach()
                                                       : inputs.initial;
  ExpansionInputs expansion{fuse(initial, inputs.context, inputs.mask),
                            inputs.ground_truth, inputs.condition, inputs.boxes};

  auto add_term = [&](const std::string& name, const AdversarialTerms& terms,
                      double weight) {
    if (wants_generator(side)) {
      out.generator = out.generator + weight * terms.generator;
      out.components[name] = terms.generator.item<double>();
    }
    if (wants_discriminator(side)) {
      out.discriminator = out.discriminator + terms.discriminator;
      out.components["disc_" + name] = terms.discriminator.item<double>();
    }
  };

  if (config.mex) {
    if (!weights.schedule.cropped) {
      throw std::invalid_argument("mex term needs a cropped schedule");
    }
    add_term("mex",
             mex_loss(expansion, weights.schedule, models.expansion, side, config.form),
             weights.lambda4);
  }
  if (config.a_mex) {
    if (models.expansion.size() != 1) {
      throw std::invalid_argument("a_mex term needs exactly one shared discriminator");
    }
    add_term("a_mex",
             a_mex_loss(expansion, weights.schedule, models.expansion.front(),
                        side, config.form),
             weights.lambda4);
  }
  if (config.local_term) {
    if (!models.local) throw std::invalid_argument("local term needs a discriminator");
    add_term("local",
             local_adversarial_loss(expansion, models.local, side, config.form),
             config.local_weight);
  }
  return out;
}

}  // namespace segedit

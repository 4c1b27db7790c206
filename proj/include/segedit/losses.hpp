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

#ifndef SEGEDIT_LOSSES_HPP_
#define SEGEDIT_LOSSES_HPP_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segedit/geometry.hpp"
#include "segedit/networks.hpp"

namespace segedit {

/// Scores are clamped to [eps, 1 - eps] before every log.
inline constexpr double kScoreEpsilon = 1e-7;

/// `standard`: discriminator minimizes -log D(real) - log(1 - D(fake)).
/// `literal`: the objective written as log D(real) + (1 - log D(fake)),
/// kept for fidelity experiments; it is unbounded.
enum class AdversarialForm { standard, literal };

/// Which halves of a loss to evaluate. Skipped halves come back as 0.
enum class LossSide { generator, discriminator, both };

struct AdversarialTerms {
  torch::Tensor generator;
  torch::Tensor discriminator;
};

torch::Tensor clamp_scores(const torch::Tensor& scores);

/// Non-saturating generator term: -mean log D(fake).
torch::Tensor generator_adversarial_term(
    const torch::Tensor& fake_scores,
    AdversarialForm form = AdversarialForm::standard);

/// -mean log D(real) - mean log(1 - D(fake)).
torch::Tensor discriminator_adversarial_term(
    const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
    AdversarialForm form = AdversarialForm::standard);

AdversarialTerms adversarial_loss(
    const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
    AdversarialForm form = AdversarialForm::standard);

/// sum_i mean |real_i - fake_i|. Real features are not differentiated.
torch::Tensor feature_matching_loss(std::span<const torch::Tensor> real,
                                    std::span<const torch::Tensor> fake);

/// sum_i w_i * mean |E_i(generated) - E_i(ground_truth)|.
torch::Tensor perceptual_loss(const torch::Tensor& generated,
                              const torch::Tensor& ground_truth,
                              FeatureExtractor& encoder);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  ExpansionSchedule schedule;

  void validate() const;
};

struct BasicLossResult {
  torch::Tensor generator;  // lambda1*adv + lambda2*fea + lambda3*pec
  torch::Tensor adversarial;
  torch::Tensor feature_matching;
  torch::Tensor perceptual;
  torch::Tensor discriminator;
};

/// Global objective on the initial output. `condition` is the conditioning
/// stack fed to the global discriminator alongside the candidate.
BasicLossResult basic_loss(const torch::Tensor& initial,
                           const torch::Tensor& ground_truth,
                           const torch::Tensor& condition,
                           const LossWeights& weights,
                           PatchDiscriminator& global,
                           FeatureExtractor& encoder,
                           LossSide side = LossSide::both,
                           AdversarialForm form = AdversarialForm::standard);

/// Batch of fused maps with one box per sample.
struct ExpansionInputs {
  torch::Tensor manipulated;   // [N, 3, H, W]
  torch::Tensor ground_truth;  // [N, 3, H, W]
  torch::Tensor condition;     // [N, K, H, W]
  std::vector<Box> boxes;      // size N
};

/// Per-level terms of the cropped multi-expansion loss; level j uses
/// discriminators[j]. Each level term is the batch mean of per-sample
/// adversarial terms.
std::vector<AdversarialTerms> mex_level_terms(
    const ExpansionInputs& inputs, const ExpansionSchedule& schedule,
    std::span<PatchDiscriminator> discriminators,
    LossSide side = LossSide::both,
    AdversarialForm form = AdversarialForm::standard);

/// Sum of mex_level_terms. Requires schedule.cropped and q+1 discriminators.
AdversarialTerms mex_loss(const ExpansionInputs& inputs,
                          const ExpansionSchedule& schedule,
                          std::span<PatchDiscriminator> discriminators,
                          LossSide side = LossSide::both,
                          AdversarialForm form = AdversarialForm::standard);

/// Per-level terms of the uncropped variant; all levels are full-canvas and
/// go through one shared discriminator.
std::vector<AdversarialTerms> a_mex_level_terms(
    const ExpansionInputs& inputs, const ExpansionSchedule& schedule,
    PatchDiscriminator& shared, LossSide side = LossSide::both,
    AdversarialForm form = AdversarialForm::standard);

/// Sum of a_mex_level_terms. Requires !schedule.cropped.
AdversarialTerms a_mex_loss(const ExpansionInputs& inputs,
                            const ExpansionSchedule& schedule,
                            PatchDiscriminator& shared,
                            LossSide side = LossSide::both,
                            AdversarialForm form = AdversarialForm::standard);

/// Local adversarial loss on the raw box crop of each sample.
AdversarialTerms local_adversarial_loss(
    const ExpansionInputs& inputs, PatchDiscriminator& local,
    LossSide side = LossSide::both,
    AdversarialForm form = AdversarialForm::standard);

struct ObjectiveConfig {
  /// Cropped expansion term, one discriminator per level.
  bool mex = false;
  /// Uncropped expansion term, one shared discriminator.
  bool a_mex = false;
  /// Extra local term on the raw box crop through its own discriminator,
  /// weighted by local_weight (global+local baseline plus a_mex).
  bool local_term = false;
  double local_weight = 1.0;
  AdversarialForm form = AdversarialForm::standard;

  /// Throws std::invalid_argument when both expansion terms are enabled.
  void validate() const;
};

struct GanModels {
  PatchDiscriminator global{nullptr};
  std::vector<PatchDiscriminator> expansion;
  PatchDiscriminator local{nullptr};
  FeatureExtractor* encoder = nullptr;
};

struct GanInputs {
  torch::Tensor initial;       // generator output, [N, 3, H, W]
  torch::Tensor ground_truth;  // [N, 3, H, W]
  torch::Tensor context;       // [N, 3, H, W]
  torch::Tensor condition;     // discriminator condition, [N, K, H, W]
  torch::Tensor mask;          // [N, 1, H, W]
  std::vector<Box> boxes;
};

struct ObjectiveResult {
  torch::Tensor generator;
  torch::Tensor discriminator;
  /// Scalar value of every term that was evaluated.
  std::map<std::string, double> components;
};

/// Global objective plus lambda4 times the selected expansion term (and the
/// optional local term). Expansion and local terms see
/// fuse(initial, context, mask). The discriminator side sums the unweighted
/// discriminator terms of every active discriminator.
ObjectiveResult mexgan_loss(const GanInputs& inputs, const LossWeights& weights,
                            const ObjectiveConfig& config, GanModels& models,
                            LossSide side = LossSide::both);

}  // namespace segedit

#endif  // SEGEDIT_LOSSES_HPP_

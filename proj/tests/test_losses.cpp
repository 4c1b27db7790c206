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

#include <cmath>

#include <gtest/gtest.h>

#include "segedit/losses.hpp"
#include "support.hpp"

namespace segedit {
namespace {

using torch::indexing::Slice;
using testing::seeded_uniform;

constexpr int kClasses = 3;

PatchDiscriminator make_disc(std::uint64_t seed, torch::ScalarType dtype = torch::kFloat) {
  DiscriminatorSpec spec;
  spec.condition_channels = kClasses;
  spec.width = 8;
  PatchDiscriminator d(spec);
  init_gan_weights(*d, seed);
  d->to(dtype);
  return d;
}

ExpansionInputs random_inputs(std::uint64_t seed, int n, int h, int w,
                              torch::ScalarType dtype = torch::kFloat) {
  std::mt19937 rng(static_cast<unsigned>(seed));
  ExpansionInputs in;
  in.manipulated = seeded_uniform({n, 3, h, w}, seed, -1, 1, dtype);
  in.ground_truth = seeded_uniform({n, 3, h, w}, seed + 100, -1, 1, dtype);
  in.condition = seeded_uniform({n, kClasses, h, w}, seed + 200, 0, 1, dtype);
  for (int b = 0; b < n; ++b) {
    std::uniform_int_distribution<int> row(0, h - 1), col(0, w - 1);
    int r1 = row(rng), r2 = row(rng), c1 = col(rng), c2 = col(rng);
    in.boxes.push_back(Box{std::min(r1, r2), std::min(c1, c2), std::max(r1, r2),
                           std::max(c1, c2)});
  }
  return in;
}

// Per-level expansion region computed from the pixel-dilation oracle.
testing::PixelRect level_rect(const Box& box, int j, const ExpansionSchedule& s, int h,
                              int w) {
  return testing::scan_support(testing::dilated_box_pixels(box, j, s.alpha, s.beta, h, w),
                               h, w);
}

torch::Tensor level_mask(const Box& box, int j, const ExpansionSchedule& s, int h, int w,
                         torch::ScalarType dtype) {
  const auto px = testing::dilated_box_pixels(box, j, s.alpha, s.beta, h, w);
  auto m = torch::zeros({h, w}, torch::TensorOptions().dtype(dtype));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m[r][c] = static_cast<double>(px[r * w + c]);
  return m;
}

double gen_term_by_hand(const torch::Tensor& fake_scores) {
  return -torch::log(fake_scores.clamp(1e-7, 1 - 1e-7)).mean().item<double>();
}

double disc_term_by_hand(const torch::Tensor& real, const torch::Tensor& fake) {
  return -torch::log(real.clamp(1e-7, 1 - 1e-7)).mean().item<double>() -
         torch::log(1 - fake.clamp(1e-7, 1 - 1e-7)).mean().item<double>();
}

TEST(Adversarial, HalfScoresGiveTwoLnTwo) {
  const auto half = torch::full({1, 1, 4, 4}, 0.5, torch::kDouble);
  const auto terms = adversarial_loss(half, half);
  EXPECT_NEAR(terms.discriminator.item<double>(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(terms.generator.item<double>(), std::log(2.0), 1e-12);
}

TEST(Adversarial, PerfectDiscriminatorLimit) {
  const auto real = torch::full({3}, 1.0, torch::kDouble);
  const auto fake = torch::full({3}, 0.0, torch::kDouble);
  const double d = adversarial_loss(real, fake).discriminator.item<double>();
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_LT(d, 1e-6);
  EXPECT_TRUE(std::isfinite(generator_adversarial_term(fake).item<double>()));
}

TEST(Adversarial, GeneratorTermDecreasesWithFakeScore) {
  double prev = std::numeric_limits<double>::infinity();
  for (double s = 0.05; s < 1.0; s += 0.05) {
    const double g = generator_adversarial_term(torch::full({2}, s, torch::kDouble)).item<double>();
    EXPECT_LT(g, prev);
    prev = g;
  }
}

TEST(Adversarial, EmptyFieldThrows) {
  EXPECT_THROW(generator_adversarial_term(torch::empty({0})), std::invalid_argument);
}

TEST(Adversarial, LiteralForm) {
  const auto real = torch::full({4}, 0.7, torch::kDouble);
  const auto fake = torch::full({4}, 0.2, torch::kDouble);
  const auto t = adversarial_loss(real, fake, AdversarialForm::literal);
  EXPECT_NEAR(t.generator.item<double>(), 1 - std::log(0.2), 1e-12);
  EXPECT_NEAR(t.discriminator.item<double>(), -(std::log(0.7) + 1 - std::log(0.2)), 1e-12);
}

TEST(FeatureMatching, Examples) {
  const std::vector<torch::Tensor> a{seeded_uniform({1, 4, 5, 5}, 1),
                                     seeded_uniform({1, 2, 3, 3}, 2)};
  EXPECT_EQ(feature_matching_loss(a, a).item<float>(), 0.0f);
  const std::vector<torch::Tensor> one{a[0]};
  const std::vector<torch::Tensor> shifted{a[0] + 1};
  EXPECT_NEAR(feature_matching_loss(one, shifted).item<float>(), 1.0, 1e-6);
  const std::vector<torch::Tensor> b{seeded_uniform({1, 4, 5, 5}, 3),
                                     seeded_uniform({1, 2, 3, 3}, 4)};
  EXPECT_FLOAT_EQ(feature_matching_loss(a, b).item<float>(),
                  feature_matching_loss(b, a).item<float>());
  const std::vector<torch::Tensor> short_list{a[0]};
  EXPECT_THROW(feature_matching_loss(a, short_list), std::invalid_argument);
}

TEST(Perceptual, ZeroOnIdenticalAndNonNegative) {
  RandomPyramidEncoder enc;
  const auto x = seeded_uniform({2, 3, 16, 16}, 1);
  EXPECT_EQ(perceptual_loss(x, x, enc).item<float>(), 0.0f);
  for (std::uint64_t s = 2; s < 7; ++s) {
    EXPECT_GE(perceptual_loss(seeded_uniform({1, 3, 16, 16}, s), x.slice(0, 0, 1), enc)
                  .item<float>(),
              0.0f);
  }
}

TEST(Gradients, PerceptualLoss) {
  RandomPyramidEncoder enc;
  enc.to(torch::kDouble);
  const auto gt = seeded_uniform({1, 3, 8, 8}, 2, -1, 1, torch::kDouble);
  auto f = [&](const torch::Tensor& x) { return perceptual_loss(x, gt, enc); };
  EXPECT_LT(testing::gradient_relative_error(f, seeded_uniform({1, 3, 8, 8}, 3, -1, 1,
                                                                torch::kDouble)),
            1e-3);
}

TEST(Gradients, AdversarialAndFeatureMatching) {
  auto d = make_disc(1, torch::kDouble);
  const auto cond = seeded_uniform({1, kClasses, 8, 8}, 4, 0, 1, torch::kDouble);
  const auto real = seeded_uniform({1, 3, 8, 8}, 5, -1, 1, torch::kDouble);
  const auto point = seeded_uniform({1, 3, 8, 8}, 6, -1, 1, torch::kDouble);
  auto adv = [&](const torch::Tensor& x) {
    return generator_adversarial_term(d->forward(x, cond).scores);
  };
  auto fea = [&](const torch::Tensor& x) {
    return feature_matching_loss(d->forward(real, cond).features,
                                 d->forward(x, cond).features);
  };
  EXPECT_LT(testing::gradient_relative_error(adv, point), 1e-3);
  EXPECT_LT(testing::gradient_relative_error(fea, point), 1e-3);
}

TEST(Gradients, ExpansionLosses) {
  auto in = random_inputs(9, 1, 8, 8, torch::kDouble);
  in.boxes[0] = Box{2, 3, 4, 5};
  std::vector<PatchDiscriminator> discs{make_disc(1, torch::kDouble),
                                        make_disc(2, torch::kDouble)};
  const ExpansionSchedule cropped{1, 2, 1, true};
  const ExpansionSchedule full{1, 2, 1, false};
  auto mex = [&](const torch::Tensor& x) {
    auto copy = in;
    copy.manipulated = x;
    return mex_loss(copy, cropped, discs, LossSide::generator).generator;
  };
  auto amex = [&](const torch::Tensor& x) {
    auto copy = in;
    copy.manipulated = x;
    return a_mex_loss(copy, full, discs[0], LossSide::generator).generator;
  };
  EXPECT_LT(testing::gradient_relative_error(mex, in.manipulated), 1e-3);
  EXPECT_LT(testing::gradient_relative_error(amex, in.manipulated), 1e-3);
}

struct BasicFixture {
  PatchDiscriminator disc = make_disc(3);
  RandomPyramidEncoder enc;
  torch::Tensor initial = seeded_uniform({2, 3, 24, 24}, 1);
  torch::Tensor truth = seeded_uniform({2, 3, 24, 24}, 2);
  torch::Tensor cond = seeded_uniform({2, kClasses, 24, 24}, 3, 0, 1);

  BasicLossResult run(double l1, double l2, double l3) {
    LossWeights w;
    w.lambda1 = l1;
    w.lambda2 = l2;
    w.lambda3 = l3;
    return basic_loss(initial, truth, cond, w, disc, enc);
  }
};

TEST(BasicLoss, Linearity) {
  BasicFixture f;
  EXPECT_EQ(f.run(0, 0, 0).generator.item<float>(), 0.0f);
  const auto adv_only = f.run(1, 0, 0);
  EXPECT_FLOAT_EQ(adv_only.generator.item<float>(), adv_only.adversarial.item<float>());
  const auto once = f.run(1, 1, 1);
  const auto twice = f.run(2, 2, 2);
  EXPECT_NEAR(twice.generator.item<float>(), 2 * once.generator.item<float>(), 1e-5);
  EXPECT_NEAR(once.generator.item<float>(),
              once.adversarial.item<float>() + once.feature_matching.item<float>() +
                  once.perceptual.item<float>(),
              1e-5);
}

TEST(BasicLoss, NegativeWeightRejected) {
  BasicFixture f;
  EXPECT_THROW(f.run(-1, 1, 1), std::invalid_argument);
}

TEST(MexLoss, LevelZeroEqualsLocalLoss) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto in = random_inputs(seed, 2, 32, 32);
    std::vector<PatchDiscriminator> discs{make_disc(seed)};
    const auto mex = mex_loss(in, ExpansionSchedule{0, 5, 5, true}, discs);
    const auto local = local_adversarial_loss(in, discs[0]);
    EXPECT_EQ(mex.generator.item<float>(), local.generator.item<float>());
    EXPECT_EQ(mex.discriminator.item<float>(), local.discriminator.item<float>());
  }
}

TEST(MexLoss, MatchesHandSummedLevels) {
  const ExpansionSchedule s{2, 3, 4, true};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto in = random_inputs(seed + 10, 2, 32, 32);
    std::vector<PatchDiscriminator> discs{make_disc(1), make_disc(2), make_disc(3)};
    const auto got = mex_loss(in, s, discs);
    double gen = 0, disc = 0;
    torch::NoGradGuard no_grad;
    for (int j = 0; j <= s.q; ++j) {
      double gj = 0, dj = 0;
      for (int b = 0; b < 2; ++b) {
        const auto rect = level_rect(in.boxes[b], j, s, 32, 32);
        auto crop = [&](const torch::Tensor& t) {
          return t[b].index({Slice(), Slice(rect.top, rect.bottom + 1),
                             Slice(rect.left, rect.right + 1)}).unsqueeze(0);
        };
        const auto real = discs[j]->forward(crop(in.ground_truth), crop(in.condition)).scores;
        const auto fake = discs[j]->forward(crop(in.manipulated), crop(in.condition)).scores;
        gj += gen_term_by_hand(fake);
        dj += disc_term_by_hand(real, fake);
      }
      gen += gj / 2;
      disc += dj / 2;
    }
    EXPECT_NEAR(got.generator.item<double>(), gen, 1e-5);
    EXPECT_NEAR(got.discriminator.item<double>(), disc, 1e-5);
  }
}

TEST(MexLoss, LevelAdditivity) {
  const auto in = random_inputs(4, 1, 32, 32);
  std::vector<PatchDiscriminator> discs{make_disc(1), make_disc(2), make_disc(3), make_disc(4)};
  for (int q = 1; q <= 3; ++q) {
    const ExpansionSchedule lo{q - 1, 2, 2, true}, hi{q, 2, 2, true};
    const auto a = mex_loss(in, lo, std::span(discs.data(), q));
    const auto b = mex_loss(in, hi, std::span(discs.data(), q + 1));
    const auto level = mex_level_terms(in, hi, std::span(discs.data(), q + 1))[q];
    EXPECT_NEAR(b.generator.item<float>() - a.generator.item<float>(),
                level.generator.item<float>(), 1e-5);
    EXPECT_NEAR(b.discriminator.item<float>() - a.discriminator.item<float>(),
                level.discriminator.item<float>(), 1e-5);
  }
}

TEST(MexLoss, IdenticalInputsGiveEqualRealAndFakeScores) {
  auto in = random_inputs(2, 1, 32, 32);
  in.manipulated = in.ground_truth.clone();
  std::vector<PatchDiscriminator> discs{make_disc(1), make_disc(2)};
  const auto t = mex_loss(in, ExpansionSchedule{1, 3, 3, true}, discs);
  // with D(real) == D(fake) == s per element, disc = -mean log s - mean log(1-s)
  double expect = 0;
  for (int j = 0; j < 2; ++j) {
    const auto rect = level_rect(in.boxes[0], j, ExpansionSchedule{1, 3, 3, true}, 32, 32);
    torch::NoGradGuard no_grad;
    auto crop = [&](const torch::Tensor& x) {
      return x.index({Slice(), Slice(), Slice(rect.top, rect.bottom + 1),
                      Slice(rect.left, rect.right + 1)});
    };
    const auto s = discs[j]->forward(crop(in.ground_truth), crop(in.condition)).scores;
    expect += disc_term_by_hand(s, s);
  }
  EXPECT_NEAR(t.discriminator.item<double>(), expect, 1e-5);
}

TEST(MexLoss, WrongDiscriminatorCountThrows) {
  const auto in = random_inputs(1, 1, 32, 32);
  std::vector<PatchDiscriminator> discs{make_disc(1)};
  EXPECT_THROW(mex_loss(in, ExpansionSchedule{1, 2, 2, true}, discs), std::invalid_argument);
  EXPECT_THROW(mex_loss(in, ExpansionSchedule{0, 2, 2, false}, discs), std::invalid_argument);
}

TEST(AMexLoss, LevelZeroIsMaskedFullCanvas) {
  const auto in = random_inputs(6, 2, 32, 32);
  auto d = make_disc(5);
  const auto t = a_mex_loss(in, ExpansionSchedule{0, 4, 4, false}, d);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> masks;
  for (int b = 0; b < 2; ++b)
    masks.push_back(level_mask(in.boxes[b], 0, ExpansionSchedule{0, 4, 4, false}, 32, 32,
                               torch::kFloat));
  const auto m = torch::stack(masks).unsqueeze(1);
  const auto real = d->forward(in.ground_truth * m, in.condition * m).scores;
  const auto fake = d->forward(in.manipulated * m, in.condition * m).scores;
  EXPECT_NEAR(t.generator.item<double>(), gen_term_by_hand(fake), 1e-6);
  EXPECT_NEAR(t.discriminator.item<double>(), disc_term_by_hand(real, fake), 1e-6);
}

TEST(AMexLoss, MatchesHandSummedLevels) {
  const ExpansionSchedule s{3, 2, 3, false};
  const auto in = random_inputs(8, 2, 32, 32);
  auto d = make_disc(7);
  const auto got = a_mex_loss(in, s, d);
  double gen = 0, disc = 0;
  torch::NoGradGuard no_grad;
  for (int j = 0; j <= s.q; ++j) {
    std::vector<torch::Tensor> masks;
    for (int b = 0; b < 2; ++b)
      masks.push_back(level_mask(in.boxes[b], j, s, 32, 32, torch::kFloat));
    const auto m = torch::stack(masks).unsqueeze(1);
    const auto real = d->forward(in.ground_truth * m, in.condition * m).scores;
    const auto fake = d->forward(in.manipulated * m, in.condition * m).scores;
    gen += gen_term_by_hand(fake);
    disc += disc_term_by_hand(real, fake);
  }
  EXPECT_NEAR(got.generator.item<double>(), gen, 1e-5);
  EXPECT_NEAR(got.discriminator.item<double>(), disc, 1e-5);
  EXPECT_THROW(a_mex_loss(in, ExpansionSchedule{1, 2, 2, true}, d), std::invalid_argument);
}

TEST(ExpansionLosses, IgnorePixelsOutsideOuterLevel) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto in = random_inputs(seed + 30, 2, 32, 32);
    const ExpansionSchedule cropped{2, 3, 3, true}, full{2, 3, 3, false};
    std::vector<PatchDiscriminator> discs{make_disc(1), make_disc(2), make_disc(3)};
    auto outside = torch::ones({2, 1, 32, 32});
    for (int b = 0; b < 2; ++b)
      outside[b][0] -= level_mask(in.boxes[b], 2, cropped, 32, 32, torch::kFloat);
    auto noisy = in;
    noisy.manipulated = in.manipulated + 5.0 * outside * seeded_uniform({2, 3, 32, 32}, seed);
    const auto a = mex_loss(in, cropped, discs);
    const auto b = mex_loss(noisy, cropped, discs);
    EXPECT_EQ(a.generator.item<float>(), b.generator.item<float>());
    EXPECT_EQ(a.discriminator.item<float>(), b.discriminator.item<float>());
    const auto c = a_mex_loss(in, full, discs[0]);
    const auto d = a_mex_loss(noisy, full, discs[0]);
    EXPECT_EQ(c.generator.item<float>(), d.generator.item<float>());
    EXPECT_EQ(c.discriminator.item<float>(), d.discriminator.item<float>());
  }
}

struct ObjectiveFixture {
  RandomPyramidEncoder enc;
  GanModels models;
  GanInputs inputs;

  explicit ObjectiveFixture(int expansion_discs) {
    models.global = make_disc(1);
    for (int j = 0; j < expansion_discs; ++j) models.expansion.push_back(make_disc(10 + j));
    models.local = make_disc(5);
    models.encoder = &enc;
    const auto in = random_inputs(3, 2, 32, 32);
    inputs.initial = in.manipulated;
    inputs.ground_truth = in.ground_truth;
    inputs.context = seeded_uniform({2, 3, 32, 32}, 77);
    inputs.condition = in.condition;
    inputs.boxes = in.boxes;
    auto mask = torch::zeros({2, 1, 32, 32});
    for (int b = 0; b < 2; ++b) {
      const Box& x = in.boxes[b];
      mask.index_put_({b, 0, Slice(x.top, x.bottom + 1), Slice(x.left, x.right + 1)}, 1.0);
    }
    inputs.mask = mask;
  }
};

TEST(Objective, ZeroLambdaFourEqualsBasic) {
  ObjectiveFixture f(3);
  LossWeights w;
  w.lambda4 = 0;
  w.schedule = ExpansionSchedule{2, 3, 3, true};
  ObjectiveConfig cfg;
  cfg.mex = true;
  const auto full = mexgan_loss(f.inputs, w, cfg, f.models);
  const auto basic = basic_loss(f.inputs.initial, f.inputs.ground_truth, f.inputs.condition,
                                w, f.models.global, f.enc);
  EXPECT_EQ(full.generator.item<float>(), basic.generator.item<float>());
  EXPECT_TRUE(full.components.contains("mex"));
  EXPECT_FALSE(full.components.contains("a_mex"));
}

TEST(Objective, BasicHasNoExpansionComponents) {
  ObjectiveFixture f(0);
  const auto out = mexgan_loss(f.inputs, LossWeights{}, ObjectiveConfig{}, f.models);
  EXPECT_EQ(out.components.size(), 4u);
  for (const char* key : {"adv", "fea", "pec", "disc_global"})
    EXPECT_TRUE(out.components.contains(key)) << key;
}

TEST(Objective, LevelZeroMexEqualsGlobalPlusLocal) {
  ObjectiveFixture f(1);
  f.models.local = f.models.expansion[0];
  LossWeights w;
  w.schedule = ExpansionSchedule{0, 5, 5, true};
  ObjectiveConfig mex;
  mex.mex = true;
  ObjectiveConfig gl;
  gl.local_term = true;
  const auto a = mexgan_loss(f.inputs, w, mex, f.models);
  const auto b = mexgan_loss(f.inputs, w, gl, f.models);
  EXPECT_EQ(a.generator.item<float>(), b.generator.item<float>());
  EXPECT_EQ(a.discriminator.item<float>(), b.discriminator.item<float>());
}

TEST(Objective, BothExpansionTermsRejected) {
  ObjectiveFixture f(1);
  ObjectiveConfig cfg;
  cfg.mex = cfg.a_mex = true;
  EXPECT_THROW(mexgan_loss(f.inputs, LossWeights{}, cfg, f.models), std::invalid_argument);
}

TEST(Objective, FiniteUnderExtremeScores) {
  ObjectiveFixture f(1);
  f.inputs.initial = f.inputs.initial * 1e6;
  LossWeights w;
  w.schedule = ExpansionSchedule{2, 3, 3, false};
  ObjectiveConfig cfg;
  cfg.a_mex = true;
  const auto out = mexgan_loss(f.inputs, w, cfg, f.models);
  EXPECT_TRUE(std::isfinite(out.generator.item<float>()));
  EXPECT_TRUE(std::isfinite(out.discriminator.item<float>()));
}

}  // namespace
}  // namespace segedit

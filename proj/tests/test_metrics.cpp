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

#include <gtest/gtest.h>

#include "segedit/metrics.hpp"
#include "support.hpp"

namespace segedit {
namespace {

using testing::label_map_from;

MaskMatrix full_mask(int h, int w) { return make_mask(Box{0, 0, h - 1, w - 1}, h, w); }

std::vector<double> luma_by_hand(const Raster& img) {
  std::vector<double> out;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out.push_back(0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) +
                    0.114 * img.at(r, c, 2));
  return out;
}

TEST(Tiou, Examples) {
  const auto m = full_mask(4, 4);
  LabelMap truth(4, 4, 0);
  EXPECT_EQ(tiou(truth, truth, m, 1), 1.0);
  for (int i = 0; i < 8; ++i) truth.data[i] = 1;
  EXPECT_EQ(tiou(truth, truth, m, 1), 1.0);
  LabelMap disjoint(4, 4, 0);
  for (int i = 8; i < 16; ++i) disjoint.data[i] = 1;
  EXPECT_EQ(tiou(disjoint, truth, m, 1), 0.0);
  // 6 of 8 truth pixels hit, 2 false positives
  LabelMap pred(4, 4, 0);
  for (int i = 0; i < 6; ++i) pred.data[i] = 1;
  pred.data[10] = pred.data[11] = 1;
  EXPECT_DOUBLE_EQ(tiou(pred, truth, m, 1), 0.6);
}

TEST(Tiou, RestrictedToMask) {
  const auto truth = label_map_from(2, 2, {1, 1, 0, 0});
  const auto pred = label_map_from(2, 2, {1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(tiou(pred, truth, make_mask(Box{0, 0, 0, 1}, 2, 2), 1), 0.5);
  EXPECT_DOUBLE_EQ(tiou(pred, truth, make_mask(Box{0, 0, 0, 0}, 2, 2), 1), 1.0);
}

TEST(Hamm, Examples) {
  const auto truth = label_map_from(2, 2, {0, 1, 2, 1});
  EXPECT_EQ(hamm(truth, truth, full_mask(2, 2)), 1.0);
  EXPECT_EQ(hamm(label_map_from(2, 2, {1, 2, 0, 0}), truth, full_mask(2, 2)), 0.0);
  EXPECT_DOUBLE_EQ(hamm(label_map_from(2, 2, {0, 1, 2, 2}), truth, full_mask(2, 2)), 0.75);
  EXPECT_THROW(hamm(truth, truth, MaskMatrix(2, 2)), std::invalid_argument);
}

TEST(Hamm, MatchesBruteForceOnSmallInstances) {
  // every 4x4 prediction whose first 8 pixels vary over 3 labels
  const auto truth = label_map_from(4, 4, {0, 1, 2, 0, 1, 1, 2, 2, 0, 0, 1, 2, 2, 1, 0, 1});
  const auto mask = make_mask(Box{0, 0, 2, 3}, 4, 4);
  std::vector<int> mask_vec(mask.data().begin(), mask.data().end());
  std::vector<int> truth_vec(truth.data.begin(), truth.data.end());
  LabelMap pred(4, 4, 1);
  int total = 1;
  for (int i = 0; i < 8; ++i) total *= 3;
  for (int code = 0; code < total; ++code) {
    int x = code;
    for (int i = 0; i < 8; ++i, x /= 3) pred.data[i] = x % 3;
    std::vector<int> pred_vec(pred.data.begin(), pred.data.end());
    ASSERT_DOUBLE_EQ(hamm(pred, truth, mask), testing::brute_hamm(pred_vec, truth_vec, mask_vec));
    const double t = tiou(pred, truth, mask, 2);
    ASSERT_GE(t, 0.0);
    ASSERT_LE(t, 1.0);
  }
}

TEST(Ssim, Examples) {
  const auto a = testing::rgb_raster(16, 16, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  GrayImage pattern{16, 16, {}};
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) pattern.values.push_back(((r / 2 + c / 2) % 2) ? 1.0 : 0.0);
  GrayImage inverted = pattern;
  for (auto& v : inverted.values) v = 1.0 - v;
  EXPECT_LT(ssim(pattern, inverted, 1.0), 0.5);
  const auto b = testing::rgb_raster(16, 16, 2);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  EXPECT_THROW(ssim(testing::rgb_raster(7, 16, 1), testing::rgb_raster(7, 16, 2)),
               std::invalid_argument);
}

TEST(Ssim, MatchesReferenceOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testing::rgb_raster(16, 16, 100 + seed);
    const auto b = testing::rgb_raster(16, 16, 200 + seed);
    EXPECT_NEAR(ssim(a, b), testing::reference_ssim(luma_by_hand(a), luma_by_hand(b), 16, 16, 255),
                1e-9);
  }
}

TEST(L1, Examples) {
  const auto a = testing::rgb_raster(4, 4, 1);
  EXPECT_EQ(l1(a, a), 0.0);
  const std::vector<double> x{0, 0, 0, 0}, y{0, 1, 2, 5};
  EXPECT_DOUBLE_EQ(l1(x, y), 2.0);
  std::vector<double> shifted{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(l1(x, shifted), 1.0);
  EXPECT_THROW(l1(x, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(L1, MatchesReferenceOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testing::rgb_raster(16, 16, 300 + seed);
    const auto b = testing::rgb_raster(16, 16, 400 + seed);
    double sum = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
      sum += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
    EXPECT_NEAR(l1(a, b), sum / a.pixels.size(), 1e-9);
  }
}

TEST(Fid, IdentityShiftAndSymmetry) {
  const auto a = testing::seeded_uniform({64, 4}, 1, -1, 1, torch::kDouble);
  EXPECT_LT(fid_features(a, a), 1e-6);
  auto offset = torch::zeros({1, 4}, torch::kDouble);
  offset[0][0] = 3.0;
  offset[0][2] = -4.0;
  EXPECT_NEAR(fid_features(a, a + offset), 25.0, 1e-6);
  const auto b = testing::seeded_uniform({64, 4}, 2, -2, 1, torch::kDouble);
  const double ab = fid_features(a, b);
  EXPECT_GE(ab, 0.0);
  EXPECT_NEAR(ab, fid_features(b, a), 1e-9);
}

TEST(Fid, DegenerateCovarianceNeedsShrinkage) {
  const auto few = testing::seeded_uniform({3, 4}, 3, -1, 1, torch::kDouble);
  EXPECT_THROW(fid_features(few, few), std::invalid_argument);
  EXPECT_LT(fid_features(few, few, 1e-3), 1e-6);
}

TEST(Fid, ImageSetsThroughEmbedding) {
  RandomConvEmbedding emb;
  std::vector<Raster> set;
  for (std::uint64_t s = 0; s < 12; ++s) set.push_back(testing::rgb_raster(32, 32, s));
  EXPECT_LT(fid(set, set, emb), 1e-6);
  const auto e1 = emb.embed(set);
  EXPECT_TRUE(torch::equal(e1, RandomConvEmbedding().embed(set)));
}

TEST(QSweepCsv, Schema) {
  const std::vector<QSweepRow> rows{{0, 0.5, 0.25}, {4, 1.0, 0.75}};
  EXPECT_EQ(q_sweep_csv(rows), "q,tiou,hamm\n0,0.500000,0.250000\n4,1.000000,0.750000\n");
}

class EvaluationTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthOptions opts;
    opts.n_train = 4;
    opts.n_test = 6;
    write_synthetic_dataset(dir_.path(), opts);
    train_ = load_dataset(dir_.path(), "train");
    test_ = load_dataset(dir_.path(), "test");
    config_.epochs = 1;
    config_.decay_start = 1;
    config_.generator.base_width = 8;
    config_.generator.residual_blocks = 1;
    config_.discriminator.width = 8;
    config_.weights.schedule = ExpansionSchedule{1, 3, 3, true};
  }
  testing::TempDir dir_;
  Dataset train_, test_;
  TrainConfig config_;
};

TEST_F(EvaluationTest, ReportIsDeterministic) {
  Trainer t(config_, train_.palette);
  auto model = edit_model_from(t);
  EvalOptions opts;
  opts.seed = 679;
  const nlohmann::json a = evaluate(model, test_, opts);
  const nlohmann::json b = evaluate(model, test_, opts);
  EXPECT_EQ(a.dump(), b.dump());
  for (const char* k : {"variant", "seed", "n_samples", "tiou_mean", "hamm_mean", "fid",
                        "ssim_mean", "l1_mean"})
    EXPECT_TRUE(a.contains(k)) << k;
  EXPECT_EQ(a.size(), 8u);
  EXPECT_TRUE(a["ssim_mean"].is_null());
  EXPECT_EQ(a["n_samples"].get<int>(), 6);
  const double tiou_mean = a["tiou_mean"].get<double>();
  EXPECT_GE(tiou_mean, 0.0);
  EXPECT_LE(tiou_mean, 1.0);
}

TEST_F(EvaluationTest, QSweepRowsAndRepeatability) {
  const std::vector<int> qs{0};
  testing::TempDir w1, w2;
  const auto a = q_sweep(train_, test_, config_, qs, w1.path());
  const auto b = q_sweep(train_, test_, config_, qs, w2.path());
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].q, 0);
  EXPECT_EQ(q_sweep_csv(a), q_sweep_csv(b));
  EXPECT_EQ(a[0].tiou, b[0].tiou);
}

}  // namespace
}  // namespace segedit

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

#ifndef SEGEDIT_METRICS_HPP_
#define SEGEDIT_METRICS_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "segedit/data.hpp"
#include "segedit/geometry.hpp"
#include "segedit/training.hpp"

namespace segedit {

/// |pred = t and truth = t| / |pred = t or truth = t| over mask pixels;
/// 1 when the union is empty.
double tiou(const LabelMap& predicted, const LabelMap& truth,
            const MaskMatrix& mask, int target);

/// Fraction of mask pixels where the labels agree. Throws on an empty mask.
double hamm(const LabelMap& predicted, const LabelMap& truth,
            const MaskMatrix& mask);

/// Single-channel image with double samples.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * width + c];
  }
};

/// Luma Y = 0.299 R + 0.587 G + 0.114 B for RGB; grayscale is copied.
GrayImage to_luma(const Raster& image);

inline constexpr int kSsimWindow = 8;

/// Mean SSIM over all 8x8 windows at stride 1 with population statistics,
/// C1 = (0.01 L)^2 and C2 = (0.03 L)^2 for dynamic range L.
double ssim(const GrayImage& a, const GrayImage& b, double dynamic_range,
            int window = kSsimWindow);
/// Luma SSIM with L = 255.
double ssim(const Raster& a, const Raster& b);

/// Mean absolute difference over every sample of both arrays.
double l1(std::span<const double> a, std::span<const double> b);
/// Same in 8-bit intensity units.
double l1(const Raster& a, const Raster& b);

/// Maps a batch of RGB images to [N, D] double feature rows.
class ImageEmbedding {
 public:
  virtual ~ImageEmbedding() = default;
  virtual torch::Tensor embed(const std::vector<Raster>& images) = 0;
};

/// Two strided convolutions with weights fixed by `seed`, followed by global
/// average pooling; `dim` output features.
class RandomConvEmbedding : public ImageEmbedding {
 public:
  explicit RandomConvEmbedding(int dim = 8, std::uint64_t seed = 2026);
  torch::Tensor embed(const std::vector<Raster>& images) override;

 private:
  torch::nn::Sequential net_{nullptr};
};

/// TorchScript feature network taking [N, 3, H, W] in [-1, 1] and returning
/// [N, D] (for example an exported inception-style pool layer).
std::unique_ptr<ImageEmbedding> load_scripted_embedding(
    const std::filesystem::path& path);

/// Frechet distance between Gaussian fits of two [N, D] feature sets.
/// `shrinkage` s blends each covariance toward (tr S / D) I. Without
/// shrinkage each set needs at least D + 1 rows and a non-singular covariance.
double fid_features(const torch::Tensor& a, const torch::Tensor& b,
                    double shrinkage = 0.0);

double fid(const std::vector<Raster>& set_a, const std::vector<Raster>& set_b,
           ImageEmbedding& embedding, double shrinkage = 0.0);

/// Which images form the reference set for FID.
enum class FidReference {
  masked_truth,  // ground truth of every masked test sample
  all_test,      // every test image, masked or not
};

struct EvalOptions {
  std::optional<std::uint64_t> seed;  // defaults to the dataset's test seed
  FidReference fid_reference = FidReference::masked_truth;
  double fid_shrinkage = 1e-3;
  ImageEmbedding* embedding = nullptr;  // defaults to RandomConvEmbedding
};

struct SampleScore {
  std::string name;
  std::optional<double> tiou;
  std::optional<double> hamm;
  std::optional<double> l1;
  std::optional<double> ssim;
};

struct EvalReport {
  std::string variant;
  std::uint64_t seed = 0;
  std::int64_t n_samples = 0;
  std::optional<double> tiou_mean;
  std::optional<double> hamm_mean;
  double fid = 0.0;
  std::optional<double> ssim_mean;
  std::optional<double> l1_mean;
  std::vector<SampleScore> samples;
};

/// Report fields only; absent metrics are null.
void to_json(nlohmann::json& j, const EvalReport& report);

/// Masks every test sample with the seeded test box and scores the edit.
/// Segmentation reports tiou/hamm, inpainting l1/ssim; both report FID.
EvalReport evaluate(EditModel& model, const Dataset& test_set,
                    const EvalOptions& options = {});

struct QSweepRow {
  int q = 0;
  double tiou = 0.0;
  double hamm = 0.0;
};

/// Trains one mex model per q under <work_dir>/q_<q> with the base config's
/// seed and scores it on the test set.
std::vector<QSweepRow> q_sweep(const Dataset& train_set, const Dataset& test_set,
                               const TrainConfig& base, std::span<const int> qs,
                               const std::filesystem::path& work_dir);

/// Header `q,tiou,hamm`, one row per entry.
std::string q_sweep_csv(std::span<const QSweepRow> rows);

}  // namespace segedit

#endif  // SEGEDIT_METRICS_HPP_

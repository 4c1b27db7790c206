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

#include "segedit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include <torch/script.h>
#include <Eigen/Dense>

namespace segedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_same_shape(const LabelMap& a, const LabelMap& b, const MaskMatrix& m) {
  if (a.height != b.height || a.width != b.width || m.height() != a.height ||
      m.width() != a.width) {
    throw std::invalid_argument("label maps and mask must share one shape");
  }
}

}  // namespace

double tiou(const LabelMap& predicted, const LabelMap& truth,
            const MaskMatrix& mask, int target) {
  check_same_shape(predicted, truth, mask);
  std::int64_t inter = 0, uni = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      const bool p = predicted.at(r, c) == target;
      const bool t = truth.at(r, c) == target;
      inter += p && t;
      uni += p || t;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double hamm(const LabelMap& predicted, const LabelMap& truth,
            const MaskMatrix& mask) {
  check_same_shape(predicted, truth, mask);
  std::int64_t same = 0, total = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      ++total;
      same += predicted.at(r, c) == truth.at(r, c);
    }
  }
  if (total == 0) throw std::invalid_argument("hamm: empty mask");
  return static_cast<double>(same) / static_cast<double>(total);
}

GrayImage to_luma(const Raster& image) {
  GrayImage out{image.height, image.width, {}};
  out.values.resize(static_cast<std::size_t>(image.height) * image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      double y;
      if (image.channels == 1) {
        y = image.at(r, c, 0);
      } else if (image.channels == 3) {
        y = 0.299 * image.at(r, c, 0) + 0.587 * image.at(r, c, 1) +
            0.114 * image.at(r, c, 2);
      } else {
        throw std::invalid_argument("to_luma: expected 1 or 3 channels");
      }
      out.values[static_cast<std::size_t>(r) * image.width + c] = y;
    }
  }
  return out;
}

double ssim(const GrayImage& a, const GrayImage& b, double dynamic_range,
            int window) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("ssim: images differ in shape");
  }
  if (window < 1 || a.height < window || a.width < window) {
    throw std::invalid_argument("ssim: image smaller than the window");
  }
  if (!(dynamic_range > 0)) throw std::invalid_argument("ssim: range must be > 0");
  const double c1 = std::pow(0.01 * dynamic_range, 2);
  const double c2 = std::pow(0.03 * dynamic_range, 2);
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  std::int64_t count = 0;
  for (int r0 = 0; r0 + window <= a.height; ++r0) {
    for (int c0 = 0; c0 + window <= a.width; ++c0) {
      double sa = 0, sb = 0;
      for (int r = r0; r < r0 + window; ++r) {
        for (int c = c0; c < c0 + window; ++c) {
          sa += a.at(r, c);
          sb += b.at(r, c);
        }
      }
      const double ma = sa / n, mb = sb / n;
      double va = 0, vb = 0, cov = 0;
      for (int r = r0; r < r0 + window; ++r) {
        for (int c = c0; c < c0 + window; ++c) {
          const double da = a.at(r, c) - ma, db = b.at(r, c) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double ssim(const Raster& a, const Raster& b) {
  if (a.channels != b.channels) throw std::invalid_argument("ssim: channel mismatch");
  return ssim(to_luma(a), to_luma(b), 255.0);
}

double l1(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("l1: inputs differ in shape or are empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

double l1(const Raster& a, const Raster& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("l1: images differ in shape");
  }
  std::vector<double> va(a.pixels.begin(), a.pixels.end());
  std::vector<double> vb(b.pixels.begin(), b.pixels.end());
  return l1(va, vb);
}

namespace {

torch::Tensor stack_images(const std::vector<Raster>& images) {
  if (images.empty()) throw std::invalid_argument("embedding: no images");
  std::vector<torch::Tensor> rows;
  for (const auto& img : images) rows.push_back(raster_to_tensor(img));
  return torch::stack(rows);
}

}  // namespace

RandomConvEmbedding::RandomConvEmbedding(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  namespace nn = torch::nn;
  net_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(3, 16, 3).stride(2).padding(1)),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
      nn::Conv2d(nn::Conv2dOptions(16, dim, 3).stride(2).padding(1)),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
      nn::AdaptiveAvgPool2d(1), nn::Flatten());
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (auto& p : net_->parameters()) {
    const double fan_in = p.dim() > 1 ? static_cast<double>(p[0].numel()) : 1.0;
    p.copy_(at::normal(0.0, 1.0 / std::sqrt(fan_in), p.sizes(), gen));
    p.requires_grad_(false);
  }
  net_->to(torch::kDouble);
  net_->eval();
}

torch::Tensor RandomConvEmbedding::embed(const std::vector<Raster>& images) {
  torch::NoGradGuard no_grad;
  return net_->forward(stack_images(images).to(torch::kDouble));
}

namespace {

class ScriptedEmbedding : public ImageEmbedding {
 public:
  explicit ScriptedEmbedding(torch::jit::script::Module module)
      : module_(std::move(module)) {
    module_.eval();
  }

  torch::Tensor embed(const std::vector<Raster>& images) override {
    torch::NoGradGuard no_grad;
    auto out = module_.forward({stack_images(images)}).toTensor();
    if (out.dim() != 2) throw std::runtime_error("scripted embedding must return [N, D]");
    return out.to(torch::kDouble);
  }

 private:
  torch::jit::script::Module module_;
};

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_eigen(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous();
  MatrixXd m(c.size(0), c.size(1));
  auto acc = c.accessor<double, 2>();
  for (int64_t i = 0; i < c.size(0); ++i) {
    for (int64_t j = 0; j < c.size(1); ++j) m(i, j) = acc[i][j];
  }
  return m;
}

struct Gaussian {
  VectorXd mean;
  MatrixXd cov;
};

Gaussian fit(const MatrixXd& x, double shrinkage) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (shrinkage == 0.0 && n < d + 1) {
    throw std::invalid_argument("fid: need at least D + 1 samples without shrinkage");
  }
  if (n < 2) throw std::invalid_argument("fid: need at least 2 samples");
  Gaussian g;
  g.mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  if (shrinkage > 0.0) {
    const double scale = g.cov.trace() / static_cast<double>(d);
    g.cov = (1.0 - shrinkage) * g.cov +
            shrinkage * scale * MatrixXd::Identity(d, d);
  }
  return g;
}

constexpr double kEigenClip = -1e-6;

VectorXd clipped_eigenvalues(const Eigen::SelfAdjointEigenSolver<MatrixXd>& es) {
  VectorXd v = es.eigenvalues();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) < 0.0) {
      if (v(i) < kEigenClip) {
        throw std::runtime_error("fid: covariance product not positive semidefinite");
      }
      v(i) = 0.0;
    }
  }
  return v;
}

MatrixXd psd_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  const VectorXd root = clipped_eigenvalues(es).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::unique_ptr<ImageEmbedding> load_scripted_embedding(const fs::path& path) {
  return std::make_unique<ScriptedEmbedding>(torch::jit::load(path.string()));
}

double fid_features(const torch::Tensor& a, const torch::Tensor& b,
                    double shrinkage) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1)) {
    throw std::invalid_argument("fid: feature sets must be [N, D] with equal D");
  }
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
    throw std::invalid_argument("fid: shrinkage must lie in [0, 1]");
  }
  const auto ga = fit(to_eigen(a), shrinkage);
  const auto gb = fit(to_eigen(b), shrinkage);
  if (shrinkage == 0.0) {
    for (const auto* g : {&ga, &gb}) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(g->cov);
      if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, g->cov.trace())) {
        throw std::invalid_argument("fid: degenerate covariance; use shrinkage");
      }
    }
  }
  // tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
  const MatrixXd root_a = psd_sqrt(ga.cov);
  const MatrixXd inner = root_a * gb.cov * root_a;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (inner + inner.transpose()));
  const double cross = clipped_eigenvalues(es).cwiseSqrt().sum();
  const double mean_term = (ga.mean - gb.mean).squaredNorm();
  const double value = mean_term + ga.cov.trace() + gb.cov.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

double fid(const std::vector<Raster>& set_a, const std::vector<Raster>& set_b,
           ImageEmbedding& embedding, double shrinkage) {
  return fid_features(embedding.embed(set_a), embedding.embed(set_b), shrinkage);
}

void to_json(json& j, const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) -> json {
    return v ? json(*v) : json(nullptr);
  };
  j = json{{"variant", r.variant},     {"seed", r.seed},
           {"n_samples", r.n_samples}, {"tiou_mean", opt(r.tiou_mean)},
           {"hamm_mean", opt(r.hamm_mean)}, {"fid", r.fid},
           {"ssim_mean", opt(r.ssim_mean)}, {"l1_mean", opt(r.l1_mean)}};
}

namespace {

double mean_of(const std::vector<SampleScore>& samples,
               std::optional<double> SampleScore::*field) {
  double total = 0.0;
  for (const auto& s : samples) total += *(s.*field);
  return total / static_cast<double>(samples.size());
}

}  // namespace

EvalReport evaluate(EditModel& model, const Dataset& test_set,
                    const EvalOptions& options) {
  Dataset masked = test_set;
  if (options.seed) masked.spec.test_seed = *options.seed;
  const Task task = model.config.task;
  const auto triples = test_masking(masked, task);
  if (triples.empty()) throw std::runtime_error("evaluate: no test sample has a box");

  std::unique_ptr<ImageEmbedding> owned;
  ImageEmbedding* embedding = options.embedding;
  if (embedding == nullptr) {
    owned = std::make_unique<RandomConvEmbedding>();
    embedding = owned.get();
  }

  std::map<std::string, const Sample*> by_name;
  for (const auto& s : test_set.samples) by_name[s.name] = &s;

  EvalReport report;
  report.variant = to_string(model.config.variant);
  report.seed = masked.spec.test_seed;
  std::vector<Raster> generated, reference;
  for (const auto& triple : triples) {
    const auto outcome = run_triple(model, triple);
    SampleScore score;
    score.name = triple.name;
    if (task == Task::segmentation) {
      const auto& truth = by_name.at(triple.name)->labels;
      score.tiou = tiou(outcome.manipulated_labels, truth, triple.mask,
                        triple.box.target_label);
      score.hamm = hamm(outcome.manipulated_labels, truth, triple.mask);
    } else {
      score.l1 = l1(outcome.manipulated_color, triple.ground_truth_color);
      score.ssim = ssim(outcome.manipulated_color, triple.ground_truth_color);
    }
    report.samples.push_back(score);
    generated.push_back(outcome.manipulated_color);
    reference.push_back(triple.ground_truth_color);
  }
  if (options.fid_reference == FidReference::all_test) {
    reference.clear();
    for (const auto& s : test_set.samples) {
      reference.push_back(task == Task::inpainting && s.image
                              ? *s.image
                              : color_encode(s.labels, test_set.palette));
    }
  }
  report.n_samples = static_cast<std::int64_t>(report.samples.size());
  if (task == Task::segmentation) {
    report.tiou_mean = mean_of(report.samples, &SampleScore::tiou);
    report.hamm_mean = mean_of(report.samples, &SampleScore::hamm);
  } else {
    report.l1_mean = mean_of(report.samples, &SampleScore::l1);
    report.ssim_mean = mean_of(report.samples, &SampleScore::ssim);
  }
  report.fid = fid(reference, generated, *embedding, options.fid_shrinkage);
  return report;
}

std::vector<QSweepRow> q_sweep(const Dataset& train_set, const Dataset& test_set,
                               const TrainConfig& base, std::span<const int> qs,
                               const fs::path& work_dir) {
  if (qs.empty()) throw std::invalid_argument("q_sweep: no q values");
  for (int q : qs) {
    if (q < 0) throw std::invalid_argument("q_sweep: q values must be >= 0");
  }
  std::vector<QSweepRow> rows;
  for (int q : qs) {
    TrainConfig config = base;
    config.variant = Variant::mex;
    config.weights.schedule.q = q;
    const auto run = run_training(train_set, config, work_dir / ("q_" + std::to_string(q)));
    auto model = load_edit_model(run.final_checkpoint);
    const auto report = evaluate(model, test_set);
    rows.push_back({q, *report.tiou_mean, *report.hamm_mean});
  }
  return rows;
}

std::string q_sweep_csv(std::span<const QSweepRow> rows) {
  std::ostringstream out;
  out << "q,tiou,hamm\n";
  char buf[96];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", row.q, row.tiou, row.hamm);
    out << buf;
  }
  return out.str();
}

}  // namespace segedit

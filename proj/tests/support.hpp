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

// Test-only helpers and brute-force reference implementations. Nothing here
// calls into the library code it is used to check.

#ifndef SEGEDIT_TESTS_SUPPORT_HPP_
#define SEGEDIT_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "segedit/data.hpp"
#include "segedit/geometry.hpp"

namespace segedit::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / "segedit_test_XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline torch::Tensor seeded_uniform(std::vector<int64_t> shape, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0,
                                    torch::ScalarType dtype = torch::kFloat) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::empty(shape, torch::TensorOptions().dtype(torch::kDouble))
      .uniform_(lo, hi, gen)
      .to(dtype);
}

// ---- geometry oracles ------------------------------------------------------

/// 1 where a pixel lies within (j*alpha, j*beta) of the box rectangle and
/// inside the image.
inline std::vector<std::uint8_t> dilated_box_pixels(const Box& b, int j, int alpha,
                                                    int beta, int h, int w) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int dr = r < b.top ? b.top - r : (r > b.bottom ? r - b.bottom : 0);
      const int dc = c < b.left ? b.left - c : (c > b.right ? c - b.right : 0);
      out[static_cast<std::size_t>(r) * w + c] = dr <= j * alpha && dc <= j * beta;
    }
  }
  return out;
}

struct PixelRect {
  int top = -1, left = -1, bottom = -1, right = -1;
};

/// Scans a binary pixel set for its extreme rows and columns.
inline PixelRect scan_support(const std::vector<std::uint8_t>& pixels, int h, int w) {
  PixelRect rect;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!pixels[static_cast<std::size_t>(r) * w + c]) continue;
      if (rect.top < 0 || r < rect.top) rect.top = r;
      if (rect.bottom < 0 || r > rect.bottom) rect.bottom = r;
      if (rect.left < 0 || c < rect.left) rect.left = c;
      if (rect.right < 0 || c > rect.right) rect.right = c;
    }
  }
  return rect;
}

/// Every (top, left, bottom, right) rectangle inside h x w.
inline std::vector<Box> all_boxes(int h, int w) {
  std::vector<Box> boxes;
  for (int t = 0; t < h; ++t)
    for (int b = t; b < h; ++b)
      for (int l = 0; l < w; ++l)
        for (int r = l; r < w; ++r) boxes.push_back(Box{t, l, b, r});
  return boxes;
}

// ---- numeric oracles -------------------------------------------------------

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) where the numeric
/// gradient uses central differences with step h on every input element.
inline double gradient_relative_error(
    const std::function<torch::Tensor(const torch::Tensor&)>& loss,
    const torch::Tensor& point, double h = 1e-5) {
  auto x = point.detach().clone().to(torch::kDouble).requires_grad_(true);
  auto value = loss(x);
  auto analytic = torch::autograd::grad({value}, {x})[0].detach();

  torch::NoGradGuard no_grad;
  auto flat = x.detach().clone().reshape({-1});
  auto numeric = torch::zeros_like(flat);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = loss(flat.view(point.sizes())).item<double>();
    flat[i] = orig - h;
    const double down = loss(flat.view(point.sizes())).item<double>();
    flat[i] = orig;
    numeric[i] = (up - down) / (2.0 * h);
  }
  const auto a = analytic.reshape({-1});
  const double denom = std::max({a.norm().item<double>(), numeric.norm().item<double>(), 1e-300});
  return (a - numeric).norm().item<double>() / denom;
}

inline double brute_hamm(const std::vector<int>& pred, const std::vector<int>& truth,
                         const std::vector<int>& mask) {
  int agree = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    if (pred[i] == truth[i]) ++agree;
  }
  return static_cast<double>(agree) / total;
}

/// SSIM written from raw moment sums (E[x], E[x^2], E[xy]) per window.
inline double reference_ssim(const std::vector<double>& a, const std::vector<double>& b,
                             int h, int w, double range, int win = 8) {
  const double k1 = 0.01 * range, k2 = 0.03 * range;
  const double c1 = k1 * k1, c2 = k2 * k2;
  double acc = 0.0;
  int windows = 0;
  for (int y = 0; y + win <= h; ++y) {
    for (int x = 0; x + win <= w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < win; ++dy) {
        for (int dx = 0; dx < win; ++dx) {
          const double va = a[(y + dy) * w + x + dx];
          const double vb = b[(y + dy) * w + x + dx];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double n = win * win;
      const double mua = sa / n, mub = sb / n;
      const double vara = saa / n - mua * mua;
      const double varb = sbb / n - mub * mub;
      const double cov = sab / n - mua * mub;
      acc += (2 * mua * mub + c1) * (2 * cov + c2) /
             ((mua * mua + mub * mub + c1) * (vara + varb + c2));
      ++windows;
    }
  }
  return acc / windows;
}

// ---- fixtures --------------------------------------------------------------

inline LabelMap label_map_from(int h, int w, std::vector<std::int32_t> values) {
  LabelMap m(h, w);
  m.data = std::move(values);
  return m;
}

inline Raster rgb_raster(int h, int w, std::uint64_t seed) {
  Raster r;
  r.height = h;
  r.width = w;
  r.channels = 3;
  r.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return r;
}

}  // namespace segedit::testing

#endif  // SEGEDIT_TESTS_SUPPORT_HPP_

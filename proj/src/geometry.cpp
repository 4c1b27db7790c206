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

#include "segedit/geometry.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

namespace segedit {

using torch::indexing::Ellipsis;
using torch::indexing::Slice;

std::string to_string(const Box& box) {
  std::ostringstream out;
  out << "[" << box.top << "," << box.left << "," << box.bottom << ","
      << box.right << "]";
  return out.str();
}

void validate_box(const Box& box, int height, int width) {
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (box.top < 0 || box.left < 0 || box.bottom >= height ||
      box.right >= width || box.top > box.bottom || box.left > box.right) {
    std::ostringstream msg;
    msg << "box " << to_string(box) << " is not valid for a " << height << "x"
        << width << " image";
    throw std::invalid_argument(msg.str());
  }
}

MaskMatrix::MaskMatrix(int height, int width)
    : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("mask dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width, 0);
}

std::int64_t MaskMatrix::count() const {
  return std::count(data_.begin(), data_.end(), std::uint8_t{1});
}

bool MaskMatrix::subset_of(const MaskMatrix& other) const {
  if (other.height_ != height_ || other.width_ != width_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] && !other.data_[i]) return false;
  }
  return true;
}

Box MaskMatrix::bounding_box() const {
  Box box{height_, width_, -1, -1};
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      if (!at(r, c)) continue;
      box.top = std::min(box.top, r);
      box.left = std::min(box.left, c);
      box.bottom = std::max(box.bottom, r);
      box.right = std::max(box.right, c);
    }
  }
  if (box.bottom < 0) {
    throw std::invalid_argument("mask has no nonzero cells");
  }
  return box;
}

at::Tensor MaskMatrix::to_tensor(at::ScalarType dtype) const {
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(data_.data()),
                                {height_, width_}, torch::kUInt8);
  return bytes.to(dtype);
}

void ExpansionSchedule::validate() const {
  if (q < 0) throw std::invalid_argument("q must be >= 0");
  if (alpha < 1) throw std::invalid_argument("alpha must be >= 1");
  if (beta < 1) throw std::invalid_argument("beta must be >= 1");
}

MaskMatrix make_mask(const Box& box, int height, int width) {
  validate_box(box, height, width);
  MaskMatrix mask(height, width);
  for (int r = box.top; r <= box.bottom; ++r) {
    for (int c = box.left; c <= box.right; ++c) mask.set(r, c, true);
  }
  return mask;
}

Box expand_box(const Box& box, int level, const ExpansionSchedule& schedule,
               int height, int width) {
  if (level < 0 || level > schedule.q) {
    throw std::out_of_range("expansion level outside [0, q]");
  }
  const int dr = level * schedule.alpha;
  const int dc = level * schedule.beta;
  return Box{std::clamp(box.top - dr, 0, height - 1),
             std::clamp(box.left - dc, 0, width - 1),
             std::clamp(box.bottom + dr, 0, height - 1),
             std::clamp(box.right + dc, 0, width - 1)};
}

namespace {

void check_trailing_dims(const at::Tensor& image, int height, int width) {
  if (image.dim() < 2 || image.size(-2) != height ||
      image.size(-1) != width) {
    throw std::invalid_argument("image and mask dimensions differ");
  }
}

}  // namespace

CropResult crop_nonzero(const at::Tensor& image, const MaskMatrix& mask) {
  check_trailing_dims(image, mask.height(), mask.width());
  const Box support = mask.bounding_box();
  auto masked = image * mask.to_tensor(image.scalar_type());
  return CropResult{
      masked.index({Ellipsis, Slice(support.top, support.bottom + 1),
                    Slice(support.left, support.right + 1)}),
      support.top, support.left};
}

CropResult crop_box(const at::Tensor& image, const Box& box) {
  validate_box(box, static_cast<int>(image.size(-2)),
               static_cast<int>(image.size(-1)));
  return CropResult{image.index({Ellipsis, Slice(box.top, box.bottom + 1),
                                 Slice(box.left, box.right + 1)}),
                    box.top, box.left};
}

std::pair<MExAreaSet, MExAreaSet> mex_areas(const at::Tensor& ground_truth,
                                            const at::Tensor& manipulated,
                                            const at::Tensor& condition,
                                            const Box& box,
                                            const ExpansionSchedule& schedule) {
  schedule.validate();
  const int height = static_cast<int>(ground_truth.size(-2));
  const int width = static_cast<int>(ground_truth.size(-1));
  check_trailing_dims(manipulated, height, width);
  check_trailing_dims(condition, height, width);
  validate_box(box, height, width);

  MExAreaSet truth_set, fake_set;
  for (int j = 0; j <= schedule.q; ++j) {
    const Box expanded = expand_box(box, j, schedule, height, width);
    MaskMatrix mask = make_mask(expanded, height, width);
    at::Tensor truth_area, fake_area, cond_area;
    if (schedule.cropped) {
      truth_area = crop_nonzero(ground_truth, mask).region;
      fake_area = crop_nonzero(manipulated, mask).region;
      cond_area = crop_nonzero(condition, mask).region;
    } else {
      auto m = mask.to_tensor(ground_truth.scalar_type());
      truth_area = ground_truth * m;
      fake_area = manipulated * m;
      cond_area = condition * m;
    }
    truth_set.levels.push_back({truth_area, cond_area, mask, expanded});
    fake_set.levels.push_back({fake_area, cond_area, mask, expanded});
  }
  return {std::move(truth_set), std::move(fake_set)};
}

at::Tensor fuse(const at::Tensor& initial, const at::Tensor& context,
                const at::Tensor& mask) {
  if (!initial.sizes().equals(context.sizes())) {
    throw std::invalid_argument("fuse: initial and context shapes differ");
  }
  if (mask.dim() < 2 || mask.size(-2) != initial.size(-2) ||
      mask.size(-1) != initial.size(-1)) {
    throw std::invalid_argument("fuse: mask does not match image H x W");
  }
  // Same as initial * M + context * (1 - M) for a binary M.
  return torch::where(mask != 0, initial, context);
}

at::Tensor fuse(const at::Tensor& initial, const at::Tensor& context,
                const MaskMatrix& mask) {
  return fuse(initial, context, mask.to_tensor(initial.scalar_type()));
}

}  // namespace segedit

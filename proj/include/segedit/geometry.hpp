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

#ifndef SEGEDIT_GEOMETRY_HPP_
#define SEGEDIT_GEOMETRY_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <ATen/Tensor.h>

namespace segedit {

/// Axis-aligned rectangle in (row, col) image coordinates. Both corners are
/// inclusive, so a one-pixel box has top == bottom and left == right.
struct Box {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int rows() const { return bottom - top + 1; }
  int cols() const { return right - left + 1; }
  std::int64_t area() const {
    return static_cast<std::int64_t>(rows()) * cols();
  }
  bool contains(int r, int c) const {
    return r >= top && r <= bottom && c >= left && c <= right;
  }
  bool contains(const Box& other) const {
    return other.top >= top && other.left >= left && other.bottom <= bottom &&
           other.right <= right;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

std::string to_string(const Box& box);

/// An edit request: where to regenerate and which category to put there.
struct EditBox {
  Box corners;
  int target_label = 0;
  friend bool operator==(const EditBox&, const EditBox&) = default;
};

/// Throws std::invalid_argument unless 0 <= top <= bottom < height and
/// 0 <= left <= right < width.
void validate_box(const Box& box, int height, int width);

/// Dense H x W binary grid stored row-major.
class MaskMatrix {
 public:
  MaskMatrix() = default;
  MaskMatrix(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t at(int r, int c) const { return data_[index(r, c)]; }
  void set(int r, int c, bool on) { data_[index(r, c)] = on ? 1 : 0; }
  std::span<const std::uint8_t> data() const { return data_; }

  std::int64_t count() const;
  bool subset_of(const MaskMatrix& other) const;
  /// Tight rectangle around the 1-cells; throws when the mask is empty.
  Box bounding_box() const;

  /// [H, W] tensor of 0/1 values.
  at::Tensor to_tensor(at::ScalarType dtype = at::kFloat) const;

  friend bool operator==(const MaskMatrix&, const MaskMatrix&) = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * width_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Expansion levels for the multi-expansion areas. `alpha` steps rows,
/// `beta` steps columns. `cropped` selects whether each level is cut down to
/// its expanded rectangle or kept on the full canvas.
struct ExpansionSchedule {
  int q = 4;
  int alpha = 5;
  int beta = 5;
  bool cropped = true;

  void validate() const;
};

MaskMatrix make_mask(const Box& box, int height, int width);

/// Grows `box` by j*alpha rows and j*beta columns on every side and clamps the
/// result to the image.
Box expand_box(const Box& box, int level, const ExpansionSchedule& schedule,
               int height, int width);

struct CropResult {
  at::Tensor region;
  int row_offset = 0;
  int col_offset = 0;
};

/// Multiplies `image` (trailing dims H x W) by the mask and keeps the tight
/// rectangle of the mask support. Pixels that are zero in the image but inside
/// the mask are kept.
CropResult crop_nonzero(const at::Tensor& image, const MaskMatrix& mask);

/// Same as crop_nonzero when the mask is known to be exactly `box`; avoids
/// rebuilding the mask.
CropResult crop_box(const at::Tensor& image, const Box& box);

struct MExLevel {
  at::Tensor area;
  at::Tensor condition;
  MaskMatrix mask;
  Box box;
};

struct MExAreaSet {
  std::vector<MExLevel> levels;
};

/// Builds the q+1 expansion areas for the ground truth and the manipulated
/// map of one sample. Inputs are [C, H, W] (any leading dims work) and must
/// share H x W. The condition regions are derived from `condition` the same
/// way and are stored in both returned sets.
std::pair<MExAreaSet, MExAreaSet> mex_areas(const at::Tensor& ground_truth,
                                            const at::Tensor& manipulated,
                                            const at::Tensor& condition,
                                            const Box& box,
                                            const ExpansionSchedule& schedule);

/// initial inside the mask, context outside. `mask` is broadcast against the
/// trailing H x W dims of the images; nonzero entries select `initial`.
at::Tensor fuse(const at::Tensor& initial, const at::Tensor& context,
                const at::Tensor& mask);
at::Tensor fuse(const at::Tensor& initial, const at::Tensor& context,
                const MaskMatrix& mask);

}  // namespace segedit

#endif  // SEGEDIT_GEOMETRY_HPP_

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

#ifndef SEGEDIT_DATA_HPP_
#define SEGEDIT_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <ATen/Tensor.h>
#include "json.hpp"

#include "segedit/geometry.hpp"
#include "segedit/image_io.hpp"

namespace segedit {

/// Sampling and shuffling use this engine everywhere so streams can be
/// serialized and restored exactly.
using Rng = std::mt19937_64;

/// Single-channel map of category ids, row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  std::int32_t at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

using Rgb = std::array<std::uint8_t, 3>;

struct Category {
  int id = 0;
  std::string name;
  Rgb color{};
  bool editable = false;
};

/// Category table. Categories are kept sorted by id; a category's position in
/// that order is its one-hot channel index.
class ColorPalette {
 public:
  ColorPalette() = default;
  /// Throws std::invalid_argument on duplicate ids or duplicate colors.
  explicit ColorPalette(std::vector<Category> categories);

  const std::vector<Category>& categories() const { return categories_; }
  std::size_t size() const { return categories_.size(); }
  bool contains(int id) const;
  int channel_of(int id) const;
  const Category& category(int id) const;
  std::set<int> editable_ids() const;

 private:
  std::vector<Category> categories_;
};

/// Label id -> RGB lookup. Throws std::invalid_argument on unknown ids.
Raster color_encode(const LabelMap& labels, const ColorPalette& palette);

/// Nearest palette color in Euclidean RGB distance; ties go to the smaller id.
LabelMap color_decode(const Raster& image, const ColorPalette& palette);

/// [3, H, W] color map in [-1, 1] -> labels; values are mapped back to the
/// 0..255 scale without rounding before the nearest-color search.
LabelMap color_decode(const at::Tensor& color_map, const ColorPalette& palette);

/// Copy of `complete` with the box interior set to the box's target label.
LabelMap build_incomplete(const LabelMap& complete, const EditBox& box);

struct DatasetSpec {
  std::filesystem::path root;
  std::string split = "train";
  std::set<int> editable;
  double size_threshold = 0.02;
  int height = 32;
  int width = 32;
  std::uint64_t test_seed = 679;

  void validate() const;
};

/// One object instance: a 4-connected component of an editable category.
struct Instance {
  int label = 0;
  Box bounds;
  std::int64_t pixels = 0;
};

std::vector<Instance> find_instances(const LabelMap& labels,
                                     const std::set<int>& categories);

/// Picks a qualifying instance uniformly at random. Instances qualify when
/// their bounding-box area is at least size_threshold of the image. Returns
/// nullopt when nothing qualifies. Draws from `rng` only when at least one
/// instance qualifies.
std::optional<EditBox> sample_box(const LabelMap& complete,
                                  const DatasetSpec& spec, Rng& rng);

struct Sample {
  std::string name;
  LabelMap labels;
  std::optional<Raster> image;
};

struct Dataset {
  ColorPalette palette;
  DatasetSpec spec;
  std::vector<Sample> samples;
};

/// Segmentation editing works on color renderings of label maps; inpainting
/// works on the natural images stored next to them.
enum class Task { segmentation, inpainting };

std::string to_string(Task task);
Task task_from_string(const std::string& text);

struct TrainingTriple {
  std::string name;
  LabelMap incomplete;
  EditBox box;
  Raster ground_truth_color;
  Raster context_color;
  MaskMatrix mask;
};

/// Assembles the triple for a fixed box. For inpainting the ground truth and
/// context are the natural image; for segmentation they are color renderings
/// of the complete and incomplete label maps.
TrainingTriple make_triple(const Sample& sample, const EditBox& box,
                           const ColorPalette& palette,
                           Task task = Task::segmentation);

/// Deterministic evaluation boxes: samples are visited in lexicographic name
/// order with one engine seeded by spec.test_seed; samples with no
/// qualifying instance are skipped. Throws on an empty dataset.
std::vector<TrainingTriple> test_masking(const Dataset& dataset,
                                         Task task = Task::segmentation);

/// Background (id 0) plus 2-5 rectangles/ellipses drawn from `categories`.
/// The last shape drawn is at least 6x6 so every map has an instance that
/// passes a 0.02 threshold at 32x32.
std::vector<LabelMap> synthesize_shapes(int n, int height, int width,
                                        const std::vector<int>& categories,
                                        Rng& rng);

/// Shaded, textured rendering of a label map used as the natural image for
/// the inpainting task.
Raster render_natural(const LabelMap& labels, const ColorPalette& palette,
                      std::uint64_t seed);

/// Palette used by the bundled synthetic set.
ColorPalette default_palette();

// palette.json: {"categories": [{"id", "name", "color": [r,g,b], "editable"}],
//                "size_threshold": float}
void to_json(nlohmann::json& j, const ColorPalette& palette);
ColorPalette palette_from_json(const nlohmann::json& j);

void save_palette(const std::filesystem::path& path,
                  const ColorPalette& palette, double size_threshold);

LabelMap label_map_from_raster(const Raster& raster);
Raster label_map_to_raster(const LabelMap& labels);

/// Reads <root>/palette.json and <root>/<split>/labels/*.png (plus
/// <root>/<split>/images/*.png when present). Samples are sorted by file name.
Dataset load_dataset(const std::filesystem::path& root,
                     const std::string& split);

struct SynthOptions {
  int n_train = 64;
  int n_test = 16;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 7;
  bool with_images = true;
};

/// Writes a complete synthetic dataset directory.
void write_synthetic_dataset(const std::filesystem::path& root,
                             const SynthOptions& options);

}  // namespace segedit

#endif  // SEGEDIT_DATA_HPP_

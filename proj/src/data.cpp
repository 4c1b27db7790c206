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

#include "segedit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

namespace segedit {

namespace fs = std::filesystem;
using nlohmann::json;

ColorPalette::ColorPalette(std::vector<Category> categories)
    : categories_(std::move(categories)) {
  std::sort(categories_.begin(), categories_.end(),
            [](const Category& a, const Category& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    for (std::size_t k = i + 1; k < categories_.size(); ++k) {
      if (categories_[i].id == categories_[k].id) {
        throw std::invalid_argument("duplicate category id " +
                                    std::to_string(categories_[i].id));
      }
      if (categories_[i].color == categories_[k].color) {
        throw std::invalid_argument("categories " +
                                    std::to_string(categories_[i].id) + " and " +
                                    std::to_string(categories_[k].id) +
                                    " share a color");
      }
    }
  }
}

bool ColorPalette::contains(int id) const {
  return std::any_of(categories_.begin(), categories_.end(),
                     [id](const Category& c) { return c.id == id; });
}

int ColorPalette::channel_of(int id) const {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (categories_[i].id == id) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown label id " + std::to_string(id));
}

const Category& ColorPalette::category(int id) const {
  return categories_[channel_of(id)];
}

std::set<int> ColorPalette::editable_ids() const {
  std::set<int> ids;
  for (const auto& c : categories_) {
    if (c.editable) ids.insert(c.id);
  }
  return ids;
}

Raster color_encode(const LabelMap& labels, const ColorPalette& palette) {
  Raster out{labels.height, labels.width, 3, {}};
  out.pixels.resize(labels.data.size() * 3);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const Rgb& rgb = palette.category(labels.data[i]).color;
    std::copy(rgb.begin(), rgb.end(), out.pixels.begin() + 3 * i);
  }
  return out;
}

namespace {

template <typename Fetch>
LabelMap decode_nearest(int height, int width, const ColorPalette& palette,
                        Fetch&& fetch) {
  LabelMap out(height, width);
  const auto& cats = palette.categories();
  if (cats.empty()) throw std::invalid_argument("empty palette");
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto px = fetch(r, c);
      double best = std::numeric_limits<double>::infinity();
      int best_id = cats.front().id;
      // categories are id-sorted, so strict < keeps the smallest id on ties
      for (const auto& cat : cats) {
        double d = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double diff = px[ch] - static_cast<double>(cat.color[ch]);
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_id = cat.id;
        }
      }
      out.at(r, c) = best_id;
    }
  }
  return out;
}

}  // namespace

LabelMap color_decode(const Raster& image, const ColorPalette& palette) {
  if (image.channels != 3) {
    throw std::invalid_argument("color_decode expects an RGB raster");
  }
  return decode_nearest(image.height, image.width, palette, [&](int r, int c) {
    return std::array<double, 3>{static_cast<double>(image.at(r, c, 0)),
                                 static_cast<double>(image.at(r, c, 1)),
                                 static_cast<double>(image.at(r, c, 2))};
  });
}

LabelMap color_decode(const at::Tensor& color_map, const ColorPalette& palette) {
  if (color_map.dim() != 3 || color_map.size(0) != 3) {
    throw std::invalid_argument("color_decode expects a [3, H, W] tensor");
  }
  auto scaled = ((color_map.detach().to(torch::kDouble) + 1.0) * 127.5)
                    .contiguous();
  auto acc = scaled.accessor<double, 3>();
  return decode_nearest(
      static_cast<int>(color_map.size(1)), static_cast<int>(color_map.size(2)),
      palette, [&](int r, int c) {
        return std::array<double, 3>{acc[0][r][c], acc[1][r][c], acc[2][r][c]};
      });
}

LabelMap build_incomplete(const LabelMap& complete, const EditBox& box) {
  validate_box(box.corners, complete.height, complete.width);
  LabelMap out = complete;
  for (int r = box.corners.top; r <= box.corners.bottom; ++r) {
    for (int c = box.corners.left; c <= box.corners.right; ++c) {
      out.at(r, c) = box.target_label;
    }
  }
  return out;
}

void DatasetSpec::validate() const {
  if (!(size_threshold >= 0.0 && size_threshold < 1.0)) {
    throw std::invalid_argument("size_threshold must lie in [0, 1)");
  }
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("dataset dimensions must be positive");
  }
}

std::vector<Instance> find_instances(const LabelMap& labels,
                                     const std::set<int>& categories) {
  std::vector<Instance> found;
  std::vector<std::uint8_t> seen(labels.data.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < labels.height; ++r) {
    for (int c = 0; c < labels.width; ++c) {
      const int label = labels.at(r, c);
      const std::size_t idx = static_cast<std::size_t>(r) * labels.width + c;
      if (seen[idx] || !categories.contains(label)) continue;
      Instance inst{label, Box{r, c, r, c}, 0};
      seen[idx] = 1;
      stack.assign(1, {r, c});
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        ++inst.pixels;
        inst.bounds.top = std::min(inst.bounds.top, y);
        inst.bounds.bottom = std::max(inst.bounds.bottom, y);
        inst.bounds.left = std::min(inst.bounds.left, x);
        inst.bounds.right = std::max(inst.bounds.right, x);
        constexpr int dy[] = {-1, 1, 0, 0};
        constexpr int dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || nx < 0 || ny >= labels.height || nx >= labels.width) {
            continue;
          }
          const std::size_t n = static_cast<std::size_t>(ny) * labels.width + nx;
          if (!seen[n] && labels.data[n] == label) {
            seen[n] = 1;
            stack.emplace_back(ny, nx);
          }
        }
      }
      found.push_back(inst);
    }
  }
  return found;
}

std::optional<EditBox> sample_box(const LabelMap& complete,
                                  const DatasetSpec& spec, Rng& rng) {
  const double image_area =
      static_cast<double>(complete.height) * complete.width;
  std::vector<Instance> qualifying;
  for (const auto& inst : find_instances(complete, spec.editable)) {
    if (static_cast<double>(inst.bounds.area()) / image_area >=
        spec.size_threshold) {
      qualifying.push_back(inst);
    }
  }
  if (qualifying.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, qualifying.size() - 1);
  const auto& chosen = qualifying[pick(rng)];
  return EditBox{chosen.bounds, chosen.label};
}

std::string to_string(Task task) {
  return task == Task::segmentation ? "segmentation" : "inpainting";
}

Task task_from_string(const std::string& text) {
  if (text == "segmentation") return Task::segmentation;
  if (text == "inpainting") return Task::inpainting;
  throw std::invalid_argument("unknown task '" + text + "'");
}

TrainingTriple make_triple(const Sample& sample, const EditBox& box,
                           const ColorPalette& palette, Task task) {
  const LabelMap& complete = sample.labels;
  TrainingTriple triple;
  triple.name = sample.name;
  triple.box = box;
  triple.incomplete = build_incomplete(complete, box);
  triple.mask = make_mask(box.corners, complete.height, complete.width);
  if (task == Task::inpainting) {
    if (!sample.image) {
      throw std::invalid_argument("sample " + sample.name +
                                  " has no natural image for inpainting");
    }
    triple.ground_truth_color = *sample.image;
    triple.context_color = *sample.image;
  } else {
    triple.ground_truth_color = color_encode(complete, palette);
    triple.context_color = color_encode(triple.incomplete, palette);
  }
  return triple;
}

std::vector<TrainingTriple> test_masking(const Dataset& dataset, Task task) {
  if (dataset.samples.empty()) {
    throw std::invalid_argument("test_masking: empty dataset");
  }
  std::vector<const Sample*> order;
  for (const auto& s : dataset.samples) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const Sample* a, const Sample* b) { return a->name < b->name; });
  Rng rng(dataset.spec.test_seed);
  std::vector<TrainingTriple> triples;
  for (const Sample* s : order) {
    auto box = sample_box(s->labels, dataset.spec, rng);
    if (!box) continue;
    triples.push_back(make_triple(*s, *box, dataset.palette, task));
  }
  return triples;
}

std::vector<LabelMap> synthesize_shapes(int n, int height, int width,
                                        const std::vector<int>& categories,
                                        Rng& rng) {
  if (n < 1) throw std::invalid_argument("synthesize_shapes: n must be >= 1");
  if (categories.empty()) {
    throw std::invalid_argument("synthesize_shapes: no categories");
  }
  const int min_side = std::max(
      3, static_cast<int>(std::ceil(std::sqrt(0.03 * height * width))));
  if (min_side > height || min_side > width) {
    throw std::invalid_argument("synthesize_shapes: image too small");
  }
  const int max_rows = std::max(min_side, height / 2);
  const int max_cols = std::max(min_side, width / 2);

  std::vector<LabelMap> maps;
  maps.reserve(n);
  std::uniform_int_distribution<int> count_dist(2, 5);
  std::uniform_int_distribution<std::size_t> cat_dist(0, categories.size() - 1);
  for (int i = 0; i < n; ++i) {
    LabelMap map(height, width, 0);
    const int shapes = count_dist(rng);
    for (int s = 0; s < shapes; ++s) {
      const int label = categories[cat_dist(rng)];
      // shape sizes shrink for early (background-ish) shapes and stay at or
      // above min_side for the last one
      const int lo = s + 1 == shapes ? min_side : std::max(2, min_side / 2);
      const int rows = std::uniform_int_distribution<int>(lo, max_rows)(rng);
      const int cols = std::uniform_int_distribution<int>(lo, max_cols)(rng);
      const int top = std::uniform_int_distribution<int>(0, height - rows)(rng);
      const int left = std::uniform_int_distribution<int>(0, width - cols)(rng);
      // even ids are ellipses, odd ids rectangles
      const bool ellipse = label % 2 == 0;
      const double cr = top + (rows - 1) / 2.0;
      const double cc = left + (cols - 1) / 2.0;
      for (int r = top; r < top + rows; ++r) {
        for (int c = left; c < left + cols; ++c) {
          if (ellipse) {
            const double y = (r - cr) / (rows / 2.0);
            const double x = (c - cc) / (cols / 2.0);
            if (x * x + y * y > 1.0) continue;
          }
          map.at(r, c) = label;
        }
      }
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

Raster render_natural(const LabelMap& labels, const ColorPalette& palette,
                      std::uint64_t seed) {
  Raster out = color_encode(labels, palette);
  Rng rng(seed);
  std::uniform_int_distribution<int> noise(-6, 6);
  for (int r = 0; r < labels.height; ++r) {
    const double shade = 0.75 + 0.25 * r / std::max(1, labels.height - 1);
    for (int c = 0; c < labels.width; ++c) {
      const int label = labels.at(r, c);
      const double texture = ((r + label * c) % 4 == 0) ? 0.85 : 1.0;
      for (int ch = 0; ch < 3; ++ch) {
        auto& px = out.pixels[(static_cast<std::size_t>(r) * labels.width + c) * 3 + ch];
        const double v = px * shade * texture + noise(rng);
        px = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

ColorPalette default_palette() {
  return ColorPalette({{0, "background", {40, 40, 40}, false},
                       {1, "car", {0, 0, 142}, true},
                       {2, "person", {220, 20, 60}, true},
                       {3, "tree", {107, 142, 35}, true},
                       {4, "building", {190, 153, 153}, true}});
}

void to_json(json& j, const ColorPalette& palette) {
  j = json::object();
  auto& cats = j["categories"] = json::array();
  for (const auto& c : palette.categories()) {
    cats.push_back({{"id", c.id},
                    {"name", c.name},
                    {"color", {c.color[0], c.color[1], c.color[2]}},
                    {"editable", c.editable}});
  }
}

ColorPalette palette_from_json(const json& j) {
  std::vector<Category> cats;
  for (const auto& item : j.at("categories")) {
    Category c;
    c.id = item.at("id").get<int>();
    c.name = item.at("name").get<std::string>();
    const auto& rgb = item.at("color");
    if (!rgb.is_array() || rgb.size() != 3) {
      throw std::invalid_argument("category color must be [r, g, b]");
    }
    for (int ch = 0; ch < 3; ++ch) {
      const int v = rgb[ch].get<int>();
      if (v < 0 || v > 255) {
        throw std::invalid_argument("color channel outside [0, 255]");
      }
      c.color[ch] = static_cast<std::uint8_t>(v);
    }
    c.editable = item.value("editable", false);
    cats.push_back(std::move(c));
  }
  return ColorPalette(std::move(cats));
}

void save_palette(const fs::path& path, const ColorPalette& palette,
                  double size_threshold) {
  json j = palette;
  j["size_threshold"] = size_threshold;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

LabelMap label_map_from_raster(const Raster& raster) {
  if (raster.channels != 1) {
    throw std::invalid_argument("label images must be 8-bit grayscale");
  }
  LabelMap map(raster.height, raster.width);
  std::copy(raster.pixels.begin(), raster.pixels.end(), map.data.begin());
  return map;
}

Raster label_map_to_raster(const LabelMap& labels) {
  Raster out{labels.height, labels.width, 1, {}};
  out.pixels.reserve(labels.data.size());
  for (auto v : labels.data) {
    if (v < 0 || v > 255) {
      throw std::invalid_argument("label id does not fit in 8 bits");
    }
    out.pixels.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

Dataset load_dataset(const fs::path& root, const std::string& split) {
  std::ifstream in(root / "palette.json");
  if (!in) throw std::runtime_error("missing " + (root / "palette.json").string());
  const json config = json::parse(in);

  Dataset ds;
  ds.palette = palette_from_json(config);
  ds.spec.root = root;
  ds.spec.split = split;
  ds.spec.editable = ds.palette.editable_ids();
  ds.spec.size_threshold = config.value("size_threshold", 0.02);

  const fs::path label_dir = root / split / "labels";
  const fs::path image_dir = root / split / "images";
  if (!fs::is_directory(label_dir)) {
    throw std::runtime_error("missing " + label_dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(label_dir)) {
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  for (const auto& file : files) {
    Sample s;
    s.name = file.stem().string();
    s.labels = label_map_from_raster(read_png(file));
    for (auto v : s.labels.data) {
      if (!ds.palette.contains(v)) {
        throw std::runtime_error(file.string() + ": label " +
                                 std::to_string(v) + " not in palette");
      }
    }
    const fs::path image_file = image_dir / file.filename();
    if (fs::exists(image_file)) {
      s.image = read_png(image_file);
      if (s.image->channels != 3 || s.image->height != s.labels.height ||
          s.image->width != s.labels.width) {
        throw std::runtime_error(image_file.string() +
                                 ": image does not match its label map");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (!ds.samples.empty()) {
    ds.spec.height = ds.samples.front().labels.height;
    ds.spec.width = ds.samples.front().labels.width;
  }
  ds.spec.validate();
  return ds;
}

void write_synthetic_dataset(const fs::path& root, const SynthOptions& options) {
  const ColorPalette palette = default_palette();
  const auto editable = palette.editable_ids();
  std::vector<int> categories(editable.begin(), editable.end());
  fs::create_directories(root);
  save_palette(root / "palette.json", palette, 0.02);

  Rng rng(options.seed);
  for (const auto& [split, count] :
       {std::pair<std::string, int>{"train", options.n_train},
        std::pair<std::string, int>{"test", options.n_test}}) {
    if (count <= 0) continue;
    fs::create_directories(root / split / "labels");
    if (options.with_images) fs::create_directories(root / split / "images");
    const auto maps =
        synthesize_shapes(count, options.height, options.width, categories, rng);
    for (int i = 0; i < count; ++i) {
      std::ostringstream name;
      name << std::setw(5) << std::setfill('0') << i << ".png";
      write_png(root / split / "labels" / name.str(),
                label_map_to_raster(maps[i]));
      if (options.with_images) {
        write_png(root / split / "images" / name.str(),
                  render_natural(maps[i], palette, options.seed * 1000003u + i));
      }
    }
  }
}

}  // namespace segedit

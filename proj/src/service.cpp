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

#include "segedit/service.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <torch/script.h>

#include "httplib.h"
#include "json.hpp"
#include "segedit/metrics.hpp"

namespace segedit {

namespace fs = std::filesystem;
using nlohmann::json;

struct EditService::Translator {
  torch::jit::script::Module module;
};

namespace {

HttpReply json_reply(int status, const json& body) {
  return {status, body.dump(), "application/json"};
}

HttpReply error_reply(int status, const std::string& message,
                      const std::string& field = {}) {
  json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return json_reply(status, body);
}

/// Client-side error carrying the offending request field.
struct BadRequest : std::runtime_error {
  BadRequest(std::string field_name, const std::string& message)
      : std::runtime_error(message), field(std::move(field_name)) {}
  std::string field;
};

std::string png_base64(const Raster& raster) {
  return base64_encode(encode_png(raster));
}

LabelMap decode_label_map(const std::string& text, const ColorPalette& palette) {
  Raster raster;
  try {
    raster = decode_png(base64_decode(text));
  } catch (const std::exception& e) {
    throw BadRequest("label_map", std::string("not a base64 PNG: ") + e.what());
  }
  if (raster.channels != 1) {
    throw BadRequest("label_map", "label map must be an 8-bit grayscale PNG");
  }
  auto labels = label_map_from_raster(raster);
  for (auto v : labels.data) {
    if (!palette.contains(v)) {
      throw BadRequest("label_map", "label " + std::to_string(v) + " is not in the palette");
    }
  }
  return labels;
}

Box parse_box(const json& request) {
  if (!request.contains("box")) throw BadRequest("box", "missing box");
  const auto& box = request.at("box");
  if (!box.is_array() || box.size() != 4 ||
      !std::all_of(box.begin(), box.end(),
                   [](const json& v) { return v.is_number_integer(); })) {
    throw BadRequest("box", "box must be four integers [r1, c1, r2, c2]");
  }
  return Box{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
             box[3].get<int>()};
}

}  // namespace

void EditService::set_model(std::shared_ptr<EditModel> model) {
  if (model && model->config.task != Task::segmentation) {
    throw std::invalid_argument("the edit service needs a segmentation model");
  }
  std::lock_guard lock(mutex_);
  model_ = std::move(model);
}

void EditService::load_model(const fs::path& checkpoint) {
  set_model(std::make_shared<EditModel>(load_edit_model(checkpoint)));
}

void EditService::mount_dataset(Dataset dataset) {
  std::lock_guard lock(mutex_);
  dataset_ = std::make_shared<const Dataset>(std::move(dataset));
}

void EditService::load_translator(const fs::path& script) {
  auto translator = std::make_shared<Translator>();
  translator->module = torch::jit::load(script.string());
  translator->module.eval();
  std::lock_guard lock(mutex_);
  translator_ = std::move(translator);
}

std::shared_ptr<EditModel> EditService::snapshot() const {
  std::lock_guard lock(mutex_);
  return model_;
}

std::shared_ptr<const ColorPalette> EditService::palette() const {
  std::lock_guard lock(mutex_);
  if (model_) return std::shared_ptr<const ColorPalette>(model_, &model_->palette);
  if (dataset_) return std::shared_ptr<const ColorPalette>(dataset_, &dataset_->palette);
  return nullptr;
}

HttpReply EditService::edit(const std::string& body) const {
  const auto start = std::chrono::steady_clock::now();
  const auto model = snapshot();
  if (!model) return error_reply(503, "no model loaded");
  std::shared_ptr<const Dataset> dataset;
  std::shared_ptr<Translator> translator;
  {
    std::lock_guard lock(mutex_);
    dataset = dataset_;
    translator = translator_;
  }
  try {
    const json request = json::parse(body, nullptr, false);
    if (request.is_discarded() || !request.is_object()) {
      throw BadRequest("", "request body must be a JSON object");
    }
    const bool has_map = request.contains("label_map");
    const bool has_id = request.contains("sample_id");
    if (has_map == has_id) {
      throw BadRequest(has_map ? "sample_id" : "label_map",
                       "exactly one of label_map and sample_id is required");
    }
    LabelMap labels;
    const Sample* sample = nullptr;
    if (has_map) {
      if (!request.at("label_map").is_string()) {
        throw BadRequest("label_map", "label_map must be a base64 string");
      }
      labels = decode_label_map(request.at("label_map").get<std::string>(),
                                model->palette);
    } else {
      if (!dataset) throw BadRequest("sample_id", "no dataset is mounted");
      const auto id = request.at("sample_id").is_string()
                          ? request.at("sample_id").get<std::string>()
                          : request.at("sample_id").dump();
      for (const auto& s : dataset->samples) {
        if (s.name == id) sample = &s;
      }
      if (!sample) throw BadRequest("sample_id", "unknown sample '" + id + "'");
      labels = sample->labels;
    }
    const Box box = parse_box(request);
    try {
      validate_box(box, labels.height, labels.width);
    } catch (const std::exception& e) {
      throw BadRequest("box", e.what());
    }
    if (!request.contains("target_label") ||
        !request.at("target_label").is_number_integer()) {
      throw BadRequest("target_label", "target_label must be an integer");
    }
    const int target = request.at("target_label").get<int>();
    if (!model->palette.contains(target)) {
      throw BadRequest("target_label",
                       "label " + std::to_string(target) + " is not in the palette");
    }

    const EditBox edit_box{box, target};
    const auto outcome = run_edit(*model, labels, edit_box);
    json response = {
        {"manipulated_color", png_base64(outcome.manipulated_color)},
        {"manipulated_labels",
         png_base64(label_map_to_raster(outcome.manipulated_labels))},
        {"height", labels.height},
        {"width", labels.width},
    };
    if (sample) {
      const auto mask = make_mask(box, labels.height, labels.width);
      response["tiou"] = tiou(outcome.manipulated_labels, sample->labels, mask, target);
      response["hamm"] = hamm(outcome.manipulated_labels, sample->labels, mask);
    }
    if (translator) {
      torch::NoGradGuard no_grad;
      auto image = translator->module.forward({outcome.fused.unsqueeze(0)}).toTensor();
      response["translated_image"] = png_base64(tensor_to_raster(image[0]));
    }
    response["latency_ms"] = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
    return json_reply(200, response);
  } catch (const BadRequest& e) {
    return error_reply(400, e.what(), e.field);
  } catch (const std::invalid_argument& e) {
    return error_reply(400, e.what());
  }
}

HttpReply EditService::labels() const {
  const auto pal = palette();
  if (!pal) return error_reply(503, "no palette loaded");
  json body = *pal;
  double threshold = 0.02;
  {
    std::lock_guard lock(mutex_);
    if (dataset_) threshold = dataset_->spec.size_threshold;
  }
  body["size_threshold"] = threshold;
  return json_reply(200, body);
}

HttpReply EditService::samples(std::size_t offset, std::size_t limit) const {
  std::shared_ptr<const Dataset> dataset;
  {
    std::lock_guard lock(mutex_);
    dataset = dataset_;
  }
  if (!dataset) return error_reply(404, "no dataset is mounted");
  const std::size_t total = dataset->samples.size();
  json ids = json::array();
  for (std::size_t i = offset; i < total && i < offset + limit; ++i) {
    ids.push_back(dataset->samples[i].name);
  }
  return json_reply(200, {{"total", total},
                          {"offset", offset},
                          {"limit", limit},
                          {"ids", ids},
                          {"height", dataset->spec.height},
                          {"width", dataset->spec.width}});
}

HttpReply EditService::sample(const std::string& id) const {
  std::shared_ptr<const Dataset> dataset;
  {
    std::lock_guard lock(mutex_);
    dataset = dataset_;
  }
  if (!dataset) return error_reply(404, "no dataset is mounted");
  for (const auto& s : dataset->samples) {
    if (s.name != id) continue;
    json body = {{"id", s.name},
                 {"height", s.labels.height},
                 {"width", s.labels.width},
                 {"labels", png_base64(label_map_to_raster(s.labels))},
                 {"color", png_base64(color_encode(s.labels, dataset->palette))}};
    if (s.image) body["image"] = png_base64(*s.image);
    return json_reply(200, body);
  }
  return error_reply(404, "unknown sample '" + id + "'");
}

struct HttpFrontend::Impl {
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const HttpReply& reply) {
  res.status = reply.status;
  res.set_content(reply.body, reply.content_type);
}

std::size_t query_size(const httplib::Request& req, const char* key,
                       std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  try {
    return static_cast<std::size_t>(std::stoull(req.get_param_value(key)));
  } catch (const std::exception&) {
    return fallback;
  }
}

}  // namespace

HttpFrontend::HttpFrontend(EditService& service,
                           std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Post("/api/edit", [&service](const httplib::Request& req,
                                   httplib::Response& res) {
    send(res, service.edit(req.body));
  });
  srv.Get("/api/labels", [&service](const httplib::Request&, httplib::Response& res) {
    send(res, service.labels());
  });
  srv.Get("/api/samples", [&service](const httplib::Request& req,
                                     httplib::Response& res) {
    send(res, service.samples(query_size(req, "offset", 0),
                              query_size(req, "limit", 100)));
  });
  srv.Get(R"(/api/samples/([^/]+))", [&service](const httplib::Request& req,
                                                 httplib::Response& res) {
    send(res, service.sample(req.matches[1]));
  });
  if (static_dir) {
    if (!srv.set_mount_point("/", static_dir->string())) {
      throw std::invalid_argument("static directory not found: " +
                                  static_dir->string());
    }
  }
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("could not bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("could not bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpFrontend::listen() { impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace segedit

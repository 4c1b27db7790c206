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

#ifndef SEGEDIT_SERVICE_HPP_
#define SEGEDIT_SERVICE_HPP_

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "segedit/data.hpp"
#include "segedit/training.hpp"

namespace segedit {

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handlers for the edit API, independent of the HTTP transport.
///
///   POST /api/edit          {"label_map": <base64 PNG> | "sample_id": id,
///                            "box": [r1, c1, r2, c2], "target_label": k}
///   GET  /api/labels        palette listing ordered by id
///   GET  /api/samples       {"total", "offset", "limit", "ids", ...}
///   GET  /api/samples/{id}  label and color PNGs of one test sample
///
/// Handlers only read the current model snapshot; set_model swaps it.
class EditService {
 public:
  EditService() = default;

  void set_model(std::shared_ptr<EditModel> model);
  void load_model(const std::filesystem::path& checkpoint);
  /// Serves the samples of `dataset` (usually the test split).
  void mount_dataset(Dataset dataset);
  /// TorchScript image translator: [1, 3, H, W] color map in [-1, 1] to an
  /// image of the same shape. Adds translated_image to edit responses.
  void load_translator(const std::filesystem::path& script);

  HttpReply edit(const std::string& body) const;
  HttpReply labels() const;
  HttpReply samples(std::size_t offset, std::size_t limit) const;
  HttpReply sample(const std::string& id) const;

 private:
  std::shared_ptr<EditModel> snapshot() const;
  std::shared_ptr<const ColorPalette> palette() const;

  mutable std::mutex mutex_;
  std::shared_ptr<EditModel> model_;
  std::shared_ptr<const Dataset> dataset_;
  struct Translator;
  std::shared_ptr<Translator> translator_;
};

/// HTTP front end over an EditService; optionally serves static files
/// under `/`.
class HttpFrontend {
 public:
  HttpFrontend(EditService& service,
               std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace segedit

#endif  // SEGEDIT_SERVICE_HPP_

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

#include "segedit/cli.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "segedit/metrics.hpp"
#include "segedit/service.hpp"
#include "segedit/training.hpp"

namespace segedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad input or configuration; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_ints(const std::string& text, const std::string& what) {
  std::vector<int> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": '" + item + "' is not an integer");
    }
  }
  if (values.empty()) throw UsageError(what + ": empty list");
  return values;
}

Box parse_box(const std::string& text) {
  const auto v = parse_ints(text, "--box");
  if (v.size() != 4) throw UsageError("--box expects r1,c1,r2,c2");
  return Box{v[0], v[1], v[2], v[3]};
}

void write_json(const fs::path& path, const json& value) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

/// Training flags shared by train, inpaint and q-sweep. Unset flags leave
/// the config-file (or default) value in place.
struct TrainFlags {
  std::string config_path;
  std::string dataset;
  std::string variant;
  int q = 0, alpha = 0, beta = 0, epochs = 0, decay_start = 0, batch_size = 0;
  double lambda4 = 0.0, lr = 0.0;
  std::uint64_t seed = 0;
  CLI::Option *config_opt{}, *dataset_opt{}, *variant_opt{}, *q_opt{}, *alpha_opt{},
      *beta_opt{}, *epochs_opt{}, *decay_opt{}, *batch_opt{}, *lambda4_opt{},
      *lr_opt{}, *seed_opt{};

  void attach(CLI::App* cmd, const std::string& variants) {
    config_opt = cmd->add_option("--config", config_path, "JSON config file");
    dataset_opt = cmd->add_option("--dataset", dataset, "dataset root");
    variant_opt = cmd->add_option("--variant", variant, variants);
    q_opt = cmd->add_option("--q", q, "expansion levels");
    alpha_opt = cmd->add_option("--alpha", alpha, "row step per level");
    beta_opt = cmd->add_option("--beta", beta, "column step per level");
    seed_opt = cmd->add_option("--seed", seed, "training seed");
    epochs_opt = cmd->add_option("--epochs", epochs);
    decay_opt = cmd->add_option("--decay-start", decay_start);
    batch_opt = cmd->add_option("--batch-size", batch_size);
    lambda4_opt = cmd->add_option("--lambda4", lambda4);
    lr_opt = cmd->add_option("--lr", lr);
  }

  TrainConfig resolve(TrainConfig config) const {
    if (*config_opt) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("config file not found: " + config_path);
      const json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw UsageError("config is not valid JSON: " + config_path);
      merge_json(j, config);
    }
    if (*dataset_opt) config.dataset = dataset;
    if (*variant_opt) config.variant = variant_from_string(variant);
    if (*q_opt) config.weights.schedule.q = q;
    if (*alpha_opt) config.weights.schedule.alpha = alpha;
    if (*beta_opt) config.weights.schedule.beta = beta;
    if (*seed_opt) config.seed = seed;
    if (*epochs_opt) config.epochs = epochs;
    if (*decay_opt) config.decay_start = decay_start;
    if (*batch_opt) config.batch_size = batch_size;
    if (*lambda4_opt) config.weights.lambda4 = lambda4;
    if (*lr_opt) config.lr = lr;
    if (config.dataset.empty()) {
      throw UsageError("missing config: pass --config or --dataset");
    }
    config.validate();
    return config;
  }
};

std::optional<Dataset> try_load_split(const fs::path& root, const std::string& split) {
  if (!fs::is_directory(root / split / "labels")) return std::nullopt;
  return load_dataset(root, split);
}

json train_and_report(const TrainConfig& config, const fs::path& out_dir,
                      const std::optional<fs::path>& resume, std::ostream& out) {
  const auto train_set = load_dataset(config.dataset, "train");
  const auto test_set = try_load_split(config.dataset, "test");
  RunOptions options;
  options.resume_from = resume;
  if (config.eval_every > 0 && test_set) {
    options.on_epoch_end = [&](int epoch, Trainer& trainer) {
      if (epoch % config.eval_every != 0) return;
      auto model = edit_model_from(trainer);
      write_json(out_dir / "eval" / ("epoch_" + std::to_string(epoch) + ".json"),
                 evaluate(model, *test_set));
    };
  }
  const auto run = run_training(train_set, config, out_dir, options);
  json summary = {{"final_checkpoint", run.final_checkpoint.string()},
                  {"log", run.log.string()},
                  {"steps", run.steps}};
  if (test_set) {
    auto model = load_edit_model(run.final_checkpoint);
    const json report = evaluate(model, *test_set);
    write_json(out_dir / "eval.json", report);
    summary["eval"] = report;
  }
  out << summary.dump(2) << '\n';
  return summary;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  at::set_num_threads(1);
  CLI::App app{"Semantic editing of segmentation maps with expansion losses",
               "segedit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a segmentation editor");
  TrainFlags train_flags;
  train_flags.attach(train, "basic|gl|mex|a-mex");
  std::string train_out, train_resume;
  train->add_option("--out", train_out, "run directory")->required();
  auto* train_resume_opt = train->add_option("--resume", train_resume, "checkpoint to resume");

  // inpaint
  auto* inpaint = app.add_subcommand("inpaint", "train and evaluate an inpainting model");
  TrainFlags inpaint_flags;
  inpaint_flags.attach(inpaint, "gl|gl-a-mex");
  std::string inpaint_out;
  inpaint->add_option("--out", inpaint_out, "run directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  std::string eval_ckpt, eval_dataset, eval_split = "test", eval_out, eval_ref = "masked-truth",
                                       eval_embedding;
  std::uint64_t eval_seed = 679;
  double eval_shrink = 1e-3;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--dataset", eval_dataset, "defaults to the training dataset");
  eval->add_option("--split", eval_split);
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "test masking seed");
  eval->add_option("--out", eval_out, "report path (also printed)");
  eval->add_option("--fid-reference", eval_ref)
      ->check(CLI::IsMember({"masked-truth", "all-test"}));
  eval->add_option("--fid-shrinkage", eval_shrink);
  eval->add_option("--embedding-script", eval_embedding, "TorchScript FID embedding");

  // edit
  auto* edit = app.add_subcommand("edit", "edit one label map");
  std::string edit_ckpt, edit_map, edit_box, edit_out, edit_labels_out;
  int edit_target = 0;
  edit->add_option("--checkpoint", edit_ckpt)->required();
  edit->add_option("--label-map", edit_map, "8-bit grayscale label PNG")->required();
  edit->add_option("--box", edit_box, "r1,c1,r2,c2 (inclusive)")->required();
  edit->add_option("--target", edit_target, "target label id")->required();
  edit->add_option("--out", edit_out, "manipulated color PNG")->required();
  edit->add_option("--labels-out", edit_labels_out, "decoded label PNG");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "write the synthetic shapes dataset");
  SynthOptions synth_options;
  std::string synth_out;
  bool synth_no_images = false;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--n-train", synth_options.n_train);
  synth->add_option("--n-test", synth_options.n_test);
  synth->add_option("--height", synth_options.height);
  synth->add_option("--width", synth_options.width);
  synth->add_option("--seed", synth_options.seed);
  synth->add_flag("--no-images", synth_no_images, "skip natural renderings");

  // q-sweep
  auto* sweep = app.add_subcommand("q-sweep", "train one mex model per q");
  TrainFlags sweep_flags;
  sweep_flags.attach(sweep, "ignored; always mex");
  std::string sweep_qs = "0,1,2,3,4", sweep_seeds, sweep_out, sweep_work;
  sweep->add_option("--q-values", sweep_qs);
  sweep->add_option("--seeds", sweep_seeds, "comma list; rows average over seeds");
  sweep->add_option("--out", sweep_out, "CSV path")->required();
  sweep->add_option("--work", sweep_work, "directory for the runs");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP edit service");
  std::string serve_ckpt, serve_dataset, serve_translate, serve_static,
      serve_host = "127.0.0.1";
  int serve_port = 8080;
  serve->add_option("--checkpoint", serve_ckpt)->required();
  serve->add_option("--dataset", serve_dataset, "dataset root; serves its test split");
  serve->add_option("--port", serve_port);
  serve->add_option("--host", serve_host);
  serve->add_option("--translate-checkpoint", serve_translate, "TorchScript translator");
  serve->add_option("--static", serve_static, "directory served under /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) {
      TrainConfig defaults;
      std::optional<fs::path> resume;
      if (*train_resume_opt) resume = train_resume;
      auto config = train_flags.resolve(defaults);
      if (config.task != Task::segmentation) {
        throw UsageError("train is for segmentation; use inpaint");
      }
      train_and_report(config, train_out, resume, out);
    } else if (*inpaint) {
      TrainConfig defaults;
      defaults.task = Task::inpainting;
      defaults.variant = Variant::gl_a_mex;
      defaults.weights.schedule = {4, 4, 4, false};
      auto config = inpaint_flags.resolve(defaults);
      config.task = Task::inpainting;
      if (config.variant != Variant::gl && config.variant != Variant::gl_a_mex) {
        throw UsageError("inpaint supports --variant gl or gl-a-mex");
      }
      train_and_report(config, inpaint_out, std::nullopt, out);
    } else if (*eval) {
      auto model = load_edit_model(eval_ckpt);
      const fs::path root = eval_dataset.empty() ? model.config.dataset : fs::path(eval_dataset);
      const auto dataset = load_dataset(root, eval_split);
      EvalOptions options;
      if (*eval_seed_opt) options.seed = eval_seed;
      options.fid_reference =
          eval_ref == "all-test" ? FidReference::all_test : FidReference::masked_truth;
      options.fid_shrinkage = eval_shrink;
      std::unique_ptr<ImageEmbedding> embedding;
      if (!eval_embedding.empty()) {
        embedding = load_scripted_embedding(eval_embedding);
        options.embedding = embedding.get();
      }
      const json report = evaluate(model, dataset, options);
      if (!eval_out.empty()) write_json(eval_out, report);
      out << report.dump(2) << '\n';
    } else if (*edit) {
      const Box box = parse_box(edit_box);
      auto model = load_edit_model(edit_ckpt);
      Raster raster;
      try {
        raster = read_png(edit_map);
      } catch (const std::exception& e) {
        throw UsageError(std::string("cannot read label map: ") + e.what());
      }
      if (raster.channels != 1) throw UsageError("label map must be 8-bit grayscale");
      const auto labels = label_map_from_raster(raster);
      for (auto v : labels.data) {
        if (!model.palette.contains(v)) {
          throw UsageError("label map contains " + std::to_string(v) +
                           ", which is not in the palette");
        }
      }
      const auto outcome = run_edit(model, labels, EditBox{box, edit_target});
      const fs::path color_path = edit_out;
      const fs::path labels_path =
          edit_labels_out.empty()
              ? color_path.parent_path() / (color_path.stem().string() + "_labels.png")
              : fs::path(edit_labels_out);
      if (color_path.has_parent_path()) fs::create_directories(color_path.parent_path());
      write_png(color_path, outcome.manipulated_color);
      write_png(labels_path, label_map_to_raster(outcome.manipulated_labels));
      out << json{{"color", color_path.string()}, {"labels", labels_path.string()}}.dump()
          << '\n';
    } else if (*synth) {
      synth_options.with_images = !synth_no_images;
      write_synthetic_dataset(synth_out, synth_options);
      out << json{{"root", synth_out},
                  {"train", synth_options.n_train},
                  {"test", synth_options.n_test}}
                 .dump()
          << '\n';
    } else if (*sweep) {
      TrainConfig base = sweep_flags.resolve(TrainConfig{});
      const auto qs = parse_ints(sweep_qs, "--q-values");
      std::vector<int> seeds = {static_cast<int>(base.seed)};
      if (!sweep_seeds.empty()) seeds = parse_ints(sweep_seeds, "--seeds");
      const fs::path work =
          sweep_work.empty() ? fs::path(sweep_out).parent_path() / "q_sweep_runs"
                             : fs::path(sweep_work);
      const auto train_set = load_dataset(base.dataset, "train");
      const auto test_set = load_dataset(base.dataset, "test");
      std::vector<QSweepRow> mean(qs.size());
      for (int seed : seeds) {
        TrainConfig config = base;
        config.seed = static_cast<std::uint64_t>(seed);
        const auto rows = q_sweep(train_set, test_set, config, qs,
                                  work / ("seed_" + std::to_string(seed)));
        err << "seed " << seed << "\n" << q_sweep_csv(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          mean[i].q = rows[i].q;
          mean[i].tiou += rows[i].tiou / static_cast<double>(seeds.size());
          mean[i].hamm += rows[i].hamm / static_cast<double>(seeds.size());
        }
      }
      const auto csv = q_sweep_csv(mean);
      const fs::path csv_path = sweep_out;
      if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
      std::ofstream(csv_path) << csv;
      out << csv;
    } else if (*serve) {
      EditService service;
      service.load_model(serve_ckpt);
      if (!serve_dataset.empty()) service.mount_dataset(load_dataset(serve_dataset, "test"));
      if (!serve_translate.empty()) service.load_translator(serve_translate);
      std::optional<fs::path> static_dir;
      if (!serve_static.empty()) static_dir = serve_static;
      HttpFrontend frontend(service, static_dir);
      const int port = frontend.bind(serve_host, serve_port);
      out << "listening on http://" << serve_host << ":" << port << std::endl;
      frontend.listen();
    }
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace segedit

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lostgan/dataset.hpp"
#include "lostgan/error.hpp"
#include "lostgan/layout_json.hpp"
#include "lostgan/metrics.hpp"
#include "lostgan/service.hpp"
#include "lostgan/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lostgan;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kCheckpointIOError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedDocument, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout- and style-conditioned image synthesis"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic corpus of coloured boxes");
  std::string synth_out;
  int synth_n = 500, synth_categories = 8, synth_lattice = 64;
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--n", synth_n, "Number of images");
  synth->add_option("--categories", synth_categories, "Number of categories");
  synth->add_option("--lattice", synth_lattice, "Image side (power of two)");
  synth->add_option("--seed", synth_seed, "Corpus seed");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert COCO-Stuff style annotations into a dataset directory");
  std::string ingest_ann, ingest_images, ingest_out, ingest_limits = "coco";
  IngestOptions ingest_opts;
  bool allow_missing = false;
  ingest->add_option("--annotations", ingest_ann, "Annotation JSON file")->required();
  ingest->add_option("--images", ingest_images, "Image root directory")->required();
  ingest->add_option("--out", ingest_out, "Output dataset directory")->required();
  ingest->add_option("--lattice", ingest_opts.lattice, "Layout lattice side");
  ingest->add_option("--min-area", ingest_opts.min_area_fraction, "Minimum box area fraction");
  ingest->add_option("--limits", ingest_limits, "Object-count limits: coco or vg")->check(CLI::IsMember({"coco", "vg"}));
  ingest->add_flag("--allow-missing", allow_missing, "Keep layouts whose image file is absent");

  // config
  auto* config_cmd = app.add_subcommand("config", "Print a preset experiment configuration");
  std::string preset = "desk32";
  int preset_classes = 8;
  config_cmd->add_option("--preset", preset, "desk32, desk64, coco64 or coco128");
  config_cmd->add_option("--num-classes", preset_classes, "Category count");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out, train_resume;
  std::int64_t train_steps = -1;
  bool quiet = false;
  train_cmd->add_option("--config", train_config, "Experiment configuration (JSON)")->required();
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
  train_cmd->add_option("--steps", train_steps, "Override total_steps");
  train_cmd->add_flag("--quiet", quiet, "Do not echo log records");

  // train-embedder
  auto* embed_cmd = app.add_subcommand("train-embedder", "Train the desk classifier on real object crops");
  std::string embed_data, embed_out;
  ConvClassifierConfig embed_config;
  embed_cmd->add_option("--data", embed_data, "Dataset directory")->required();
  embed_cmd->add_option("--out", embed_out, "Classifier checkpoint path")->required();
  embed_cmd->add_option("--steps", embed_config.steps, "Optimizer steps");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Compute IS, FID, diversity and CAS for a checkpoint");
  std::string eval_ckpt, eval_data, eval_out, eval_metrics = "is,fid,diversity,cas", eval_embedder_ckpt;
  EvaluationOptions eval_opts;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Training checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--metrics", eval_metrics, "Comma-separated subset of is,fid,diversity,cas");
  eval_cmd->add_option("--embedder", eval_opts.embedder, "desk or identity")->check(CLI::IsMember({"desk", "identity"}));
  eval_cmd->add_option("--embedder-ckpt", eval_embedder_ckpt, "Pre-trained desk classifier");
  eval_cmd->add_option("--layouts", eval_opts.layouts, "Number of layouts");
  eval_cmd->add_option("--pairs", eval_opts.diversity_pairs, "Diversity pairs per layout");
  eval_cmd->add_option("--splits", eval_opts.is_splits, "Inception score splits");
  eval_cmd->add_option("--seed", eval_opts.seed, "Sampling seed");
  eval_cmd->add_option("--out", eval_out, "Report path (stdout when omitted)");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Render one layout document to PNG");
  std::string gen_ckpt, gen_layout, gen_out;
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--ckpt", gen_ckpt, "Training checkpoint")->required();
  gen_cmd->add_option("--layout", gen_layout, "Layout document")->required();
  gen_cmd->add_option("--seed", gen_seed, "Style seed (ignored when the document carries a style)");
  gen_cmd->add_option("--out", gen_out, "Output PNG")->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inference service");
  std::string serve_ckpt = env_or("CKPT_PATH", ""), serve_bind = env_or("BIND_ADDR", "0.0.0.0:8080");
  int serve_max_objects = 8;
  serve_cmd->add_option("--ckpt", serve_ckpt, "Checkpoint (default $CKPT_PATH)");
  serve_cmd->add_option("--bind", serve_bind, "host:port (default $BIND_ADDR or 0.0.0.0:8080)");
  serve_cmd->add_option("--max-objects", serve_max_objects, "Largest accepted layout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto spec = SyntheticSceneSpec::standard(synth_categories, synth_lattice);
      const auto ds = make_synthetic_corpus(spec, synth_n, synth_seed);
      ds.save(synth_out);
      std::cout << "wrote " << ds.size() << " images to " << synth_out << '\n';
    } else if (ingest->parsed()) {
      ingest_opts.limits = ingest_limits == "vg" ? LayoutLimits::visual_genome() : LayoutLimits::coco();
      ingest_opts.require_images = !allow_missing;
      const auto result = ingest_coco_stuff(ingest_ann, ingest_images, ingest_opts);
      result.dataset.save(ingest_out);
      std::ofstream(fs::path(ingest_out) / "manifest.txt") << format_manifest(result.manifest);
      std::cout << "retained " << result.dataset.size() << " of " << result.manifest.size() << " images ("
                << result.missing_images << " missing)\n";
    } else if (config_cmd->parsed()) {
      std::cout << experiment_preset(preset, preset_classes).to_json().dump(2) << '\n';
    } else if (train_cmd->parsed()) {
      auto config = ExperimentConfig::load(train_config);
      if (train_steps >= 0) config.train.total_steps = train_steps;
      auto data = LayoutDataset::load(train_data);
      data.preload();
      TrainOptions options;
      options.out_dir = train_out;
      options.verbose = !quiet;
      if (!train_resume.empty()) options.resume = train_resume;
      write_json(fs::path(train_out) / "config.json", config.to_json());
      const auto summary = train(config, data, options);
      json out = {{"final_step", summary.final_step},
                  {"seconds", summary.seconds},
                  {"checkpoint", summary.last_checkpoint.string()},
                  {"losses", summary.last.to_json()}};
      if (summary.palette) out["palette_match"] = summary.palette->match_rate;
      std::cout << out.dump() << '\n';
    } else if (embed_cmd->parsed()) {
      auto data = LayoutDataset::load(embed_data);
      ConvClassifier classifier(data.cats.size(), embed_config);
      const auto crops = object_crops(data, embed_config.crop_size);
      classifier.fit(crops);
      classifier.save(embed_out);
      std::cout << json{{"train_accuracy", classifier.accuracy(crops)}, {"crops", crops.images.size()}}.dump() << '\n';
    } else if (eval_cmd->parsed()) {
      const auto model = load_model(eval_ckpt);
      auto data = LayoutDataset::load(eval_data);
      eval_opts.metrics = split_list(eval_metrics);
      if (!eval_embedder_ckpt.empty()) eval_opts.embedder_checkpoint = eval_embedder_ckpt;
      const json report = evaluate_model(model, data, eval_opts);
      if (eval_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        write_json(eval_out, report);
      }
    } else if (gen_cmd->parsed()) {
      Service service(load_model(gen_ckpt), ServiceOptions{{1, 1 << 20}});
      json request = {{"layout", json::parse(read_file(gen_layout))}};
      if (!request["layout"].contains("style")) request["style"] = {{"seed", gen_seed}};
      const auto response = service.generate(request);
      if (response.status != 200) {
        std::cerr << response.body.dump() << '\n';
        return 1;
      }
      const auto bytes = base64_decode(response.body["image"]["data"].get<std::string>());
      std::ofstream(gen_out, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      std::cout << response.body["style"].dump() << '\n';
    } else if (serve_cmd->parsed()) {
      ServiceOptions options;
      options.limits = {1, serve_max_objects};
      Service service(options);
      if (!serve_ckpt.empty()) service.load(serve_ckpt);
      const auto [host, port] = parse_bind_address(serve_bind);
      std::cerr << "serving on " << host << ':' << port << (service.loaded() ? "" : " (no model loaded)") << '\n';
      run_http_server(service, host, port);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.name() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

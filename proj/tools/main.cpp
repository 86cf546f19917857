#include <torch/torch.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "latent_ofer/config.hpp"
#include "latent_ofer/dataset.hpp"
#include "latent_ofer/errors.hpp"
#include "latent_ofer/experiments.hpp"
#include "latent_ofer/toy_data.hpp"

namespace fs = std::filesystem;
using namespace latent_ofer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitModel = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

struct Context {
  ExperimentConfig config;
  fs::path out;
  ModelPaths paths;

  fs::path manifest(const fs::path& configured, const char* split) const {
    return configured.empty() ? out / "data" / split / "labels.csv" : configured;
  }
  Dataset train() const { return ingest(manifest(config.train_manifest, "train")); }
  Dataset val() const { return ingest(manifest(config.val_manifest, "val")); }
  Dataset test() const { return ingest(manifest(config.test_manifest, "test")); }
};

Context make_context(const Globals& g) {
  Context ctx;
  ctx.config = g.config_path.empty() ? parse_config("") : load_config(g.config_path);
  if (g.seed) {
    ctx.config.seed = *g.seed;
    ctx.config.sync();
  }
  ctx.config.validate();
  ctx.out = g.out;
  ctx.paths.dir = ctx.config.models_dir.is_absolute() ? ctx.config.models_dir : ctx.out / ctx.config.models_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(DataError::Code::kUnwritable, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  std::cout << path.string() << '\n';
}

nlohmann::json losses_json(const std::vector<EpochLosses>& log) {
  auto out = nlohmann::json::array();
  for (const auto& e : log) {
    out.push_back({{"epoch", e.epoch}, {"total", e.total}, {"re", e.re}, {"c", e.c},
                   {"sc", e.sc}, {"d", e.d}, {"df", e.df}});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Occluded facial expression recognition: detection, reconstruction and latent fusion."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--out", g.out, "Output directory (all paths are relative to it)");

  auto* gen = app.add_subcommand("gen-data", "Render the toy train/val/test face sets");
  int n_train = 700, n_val = 140, n_test = 280;
  gen->add_option("--train", n_train, "Training images")->check(CLI::PositiveNumber);
  gen->add_option("--val", n_val, "Validation images")->check(CLI::PositiveNumber);
  gen->add_option("--test", n_test, "Test images")->check(CLI::PositiveNumber);

  auto* train_recon = app.add_subcommand("train-recon", "Train the frozen expression net and the reconstructors");
  auto* train_svdd_cmd = app.add_subcommand("train-svdd", "Train the patch occlusion detector");
  auto* train_fer_cmd = app.add_subcommand("train-fer", "Train the expression classifiers for every fusion mode");

  std::string input, mask_path, mode_name;
  auto* detect = app.add_subcommand("detect", "Write the detected occlusion mask of an image as JSON");
  detect->add_option("--in", input, "Input PNG")->required()->check(CLI::ExistingFile);
  auto* reconstruct = app.add_subcommand("reconstruct", "Detect (or read) a mask and reconstruct the image");
  reconstruct->add_option("--in", input, "Input PNG")->required()->check(CLI::ExistingFile);
  reconstruct->add_option("--mask", mask_path, "Mask JSON instead of running the detector")->check(CLI::ExistingFile);
  auto* predict = app.add_subcommand("predict", "Run the full pipeline on one image");
  predict->add_option("--in", input, "Input PNG")->required()->check(CLI::ExistingFile);
  predict->add_option("--mode", mode_name, "Fusion mode (default from config)");

  auto* sweep = app.add_subcommand("sweep", "Accuracy vs occlusion proportion for both protocols");
  auto* ablate = app.add_subcommand("ablate", "Module ablation grid (10 rows)");
  auto* report = app.add_subcommand("report", "Full evaluation report");
  std::vector<std::string> sections{"detection", "reconstruction", "sweep", "ablation"};
  report->add_option("--sections", sections, "Subset of report sections")
      ->delimiter(',')
      ->check(CLI::IsMember({"detection", "reconstruction", "sweep", "ablation"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    auto ctx = make_context(g);
    const auto& cfg = ctx.config;
    const auto stem = fs::path(input).stem().string();

    if (gen->parsed()) {
      for (auto [split, n, k] : {std::tuple{"train", n_train, 0}, {"val", n_val, 1}, {"test", n_test, 2}}) {
        std::cout << generate_toy_dataset(n, cfg.seed * 3 + k, ctx.out / "data" / split).string() << '\n';
      }
    } else if (train_recon->parsed()) {
      const auto train = ctx.train();
      auto models = load_models(ctx.paths.dir);
      models.semantic = train_semantic_stage(train, cfg, ctx.paths);
      const auto logs = train_recon_stage(train, cfg, models, ctx.paths);
      write_json(ctx.out / "logs" / "recon_training.json",
                 {{"coarse", losses_json(logs.self_assembly_log.coarse)},
                  {"refine", losses_json(logs.self_assembly_log.refine)},
                  {"refine_plain", losses_json(logs.plain_log.refine)}});
    } else if (train_svdd_cmd->parsed()) {
      auto models = load_models(ctx.paths.dir);
      SvddTrainingLog log;
      const auto model = train_svdd_stage(ctx.train(), cfg, models, ctx.paths, &log);
      write_json(ctx.out / "logs" / "svdd_training.json",
                 {{"epoch_loss", log.epoch_loss}, {"radius", model.radius}, {"n_train", model.n_train}});
    } else if (train_fer_cmd->parsed()) {
      auto models = load_models(ctx.paths.dir);
      train_fer_stage(ctx.train(), cfg, models, ctx.paths);
      std::cout << ctx.paths.dir.string() << '\n';
    } else if (detect->parsed()) {
      auto models = load_models(ctx.paths.dir);
      const auto result = detect_occlusion(models, read_png(input));
      auto j = nlohmann::json::parse(mask_to_json(result.mask));
      for (const auto& s : result.scores) j["distances"].push_back(s.distance);
      j["radius"] = models.svdd->radius;
      write_json(ctx.out / (stem + "_mask.json"), j);
    } else if (reconstruct->parsed()) {
      auto models = load_models(ctx.paths.dir);
      const auto image = read_png(input);
      OcclusionMask mask;
      if (mask_path.empty()) {
        mask = detect_occlusion(models, image).mask;
      } else {
        std::ifstream in(mask_path);
        std::stringstream text;
        text << in.rdbuf();
        mask = mask_from_json(text.str());
      }
      if (mask.all()) throw DomainError("every patch is masked; nothing is left to reconstruct from");
      const auto rec = models.reconstruction(true).run(image, mask);
      const auto png = ctx.out / (stem + "_reconstructed.png");
      write_png(png, rec.refined);
      const auto q = image_quality(image, rec.refined);
      write_json(ctx.out / (stem + "_reconstruction.json"),
                 {{"image", png.filename().string()},
                  {"psnr_vs_input", std::isfinite(q.psnr) ? nlohmann::json(q.psnr) : nlohmann::json("inf")},
                  {"ssim_vs_input", q.ssim},
                  {"mask_proportion", mask.proportion()},
                  {"occluded_patch_indices", mask.occluded_indices()}});
    } else if (predict->parsed()) {
      auto models = load_models(ctx.paths.dir);
      const auto mode = mode_name.empty() ? cfg.predict_mode : parse_fusion_mode(mode_name);
      write_json(ctx.out / (stem + "_prediction.json"), prediction_json(predict_pipeline(read_png(input), models, mode)));
    } else if (sweep->parsed()) {
      auto models = load_models(ctx.paths.dir);
      EvaluationReport r;
      r.sweep = run_occlusion_sweep(models, ctx.test(), cfg);
      write_sweep_plot(*r.sweep, ctx.out / "reports" / "sweep.png");
      write_json(ctx.out / "reports" / "sweep.json", report_json(r));
    } else if (ablate->parsed()) {
      auto models = load_models(ctx.paths.dir);
      EvaluationReport r;
      r.ablation = run_ablation(models, ctx.test(), cfg);
      write_json(ctx.out / "reports" / "ablation.json", report_json(r));
    } else if (report->parsed()) {
      auto models = load_models(ctx.paths.dir);
      const auto test = ctx.test();
      const auto val = ctx.val();
      auto wanted = [&](const char* name) { return std::find(sections.begin(), sections.end(), name) != sections.end(); };
      EvaluationReport r;
      if (wanted("detection")) r.detection = evaluate_detection(models, test, cfg);
      if (wanted("reconstruction")) {
        r.reconstruction = evaluate_reconstruction(models, val, cfg, true);
        if (models.refiner_plain) r.reconstruction_plain = evaluate_reconstruction(models, val, cfg, false);
      }
      if (wanted("sweep")) {
        r.sweep = run_occlusion_sweep(models, test, cfg);
        write_sweep_plot(*r.sweep, ctx.out / "reports" / "sweep.png");
      }
      if (wanted("ablation")) r.ablation = run_ablation(models, test, cfg);
      write_json(ctx.out / "reports" / "report.json", report_json(r));
    }
    return kExitOk;
  } catch (const ModelError& e) {
    std::cerr << "model error [" << e.stage() << "]: " << e.what() << '\n';
    return kExitModel;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const c10::Error& e) {
    std::cerr << "model error [torch]: " << e.what_without_backtrace() << '\n';
    return kExitModel;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

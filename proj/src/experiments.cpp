#include "latent_ofer/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latent_ofer/errors.hpp"
#include "latent_ofer/occlusion.hpp"
#include "latent_ofer/plot.hpp"
#include "latent_ofer/tensor_utils.hpp"
#include "latent_ofer/toy_data.hpp"

namespace latent_ofer {

namespace {

constexpr int64_t kInferenceBatch = 64;

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

std::string file_token(FusionMode mode) {
  std::string s(to_string(mode));
  std::replace(s.begin(), s.end(), '+', '-');
  return s;
}

// Eval-mode, no-grad logits over a dataset in fixed-size batches.
torch::Tensor batched_logits(FerNet& net, const torch::Tensor& images, const torch::Tensor& latents,
                             const torch::Tensor& keys) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t s = 0; s < images.size(0); s += kInferenceBatch) {
    const auto e = std::min(images.size(0), s + kInferenceBatch);
    out.push_back(net->forward(images.slice(0, s, e), latents.defined() ? latents.slice(0, s, e) : torch::Tensor{},
                               keys.defined() ? keys.slice(0, s, e) : torch::Tensor{})
                      .logits);
  }
  return torch::cat(out, 0);
}

torch::Tensor batched_attention(FerNet& net, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t s = 0; s < images.size(0); s += kInferenceBatch) {
    out.push_back(net->cnn()->forward(images.slice(0, s, std::min(images.size(0), s + kInferenceBatch))).attention);
  }
  return torch::cat(out, 0);
}

std::vector<int> argmax_rows(const torch::Tensor& logits) {
  auto idx = logits.argmax(1).to(torch::kInt64).contiguous();
  return std::vector<int>(idx.data_ptr<int64_t>(), idx.data_ptr<int64_t>() + idx.numel());
}

// Logits for one fusion mode; latents-only extraction takes its keys from
// the frozen CNN-only network.
torch::Tensor mode_logits(PipelineModels& models, FusionMode mode, int seed_index, const torch::Tensor& images,
                          const torch::Tensor& latents) {
  torch::Tensor keys;
  if (mode == FusionMode::kExtractedLatents) keys = batched_attention(models.semantic, images);
  return batched_logits(models.fer_net(mode, seed_index), images, uses_latents(mode) ? latents : torch::Tensor{},
                        keys);
}

nlohmann::json metrics_json(const DetectionMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"degenerate", m.degenerate},
          {"true_positive", m.true_positive},
          {"false_positive", m.false_positive},
          {"true_negative", m.true_negative},
          {"false_negative", m.false_negative}};
}

nlohmann::json curve_json(const AccuracyCurve& c) {
  return {{"protocol", c.protocol},
          {"proportions", c.proportions},
          {"accuracy", c.accuracy},
          {"predictions", c.predictions}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Models

std::filesystem::path ModelPaths::fer(FusionMode mode, int seed_index) const {
  return dir / ("fer_" + file_token(mode) + "_s" + std::to_string(seed_index) + ".ckpt");
}

ReconstructionModel PipelineModels::reconstruction(bool self_assembly) const {
  require_refiner(self_assembly);
  return ReconstructionModel{coarse, self_assembly ? refiner : refiner_plain};
}

FerNet& PipelineModels::fer_net(FusionMode mode, int seed_index) {
  require_fer(mode, seed_index + 1);
  return fer.at(mode)[seed_index];
}

void PipelineModels::require_semantic() const {
  if (!semantic) throw ModelError("semantic-fer", "the frozen expression network is not trained");
}

void PipelineModels::require_coarse() const {
  if (!coarse) throw ModelError("reconstruct", "the coarse reconstruction model is not trained");
}

void PipelineModels::require_refiner(bool self_assembly) const {
  require_coarse();
  if (!(self_assembly ? refiner : refiner_plain)) {
    throw ModelError("reconstruct", self_assembly ? "the refiner is not trained" : "the plain refiner is not trained");
  }
}

void PipelineModels::require_detector() const {
  require_coarse();
  if (!svdd) throw ModelError("detect", "the occlusion detector is not trained");
}

void PipelineModels::require_fer(FusionMode mode, int seeds) const {
  auto it = fer.find(mode);
  if (it == fer.end() || static_cast<int>(it->second.size()) < seeds) {
    throw ModelError("fer", "no trained expression network for mode " + std::string(to_string(mode)));
  }
}

PipelineModels load_models(const std::filesystem::path& dir) {
  const ModelPaths paths{dir};
  PipelineModels m;
  if (std::filesystem::exists(paths.semantic_fer())) m.semantic = load_fer(paths.semantic_fer());
  if (std::filesystem::exists(paths.coarse())) m.coarse = load_coarse(paths.coarse());
  if (std::filesystem::exists(paths.refiner(true))) m.refiner = load_refiner(paths.refiner(true));
  if (std::filesystem::exists(paths.refiner(false))) m.refiner_plain = load_refiner(paths.refiner(false));
  if (std::filesystem::exists(paths.svdd()) && std::filesystem::exists(paths.svdd_sidecar())) {
    m.svdd = load_svdd(paths.svdd(), paths.svdd_sidecar());
  }
  for (auto mode : kAblationModes) {
    for (int k = 0; std::filesystem::exists(paths.fer(mode, k)); ++k) m.fer[mode].push_back(load_fer(paths.fer(mode, k)));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training

torch::Tensor encode_latents(CoarseReconstructor& coarse, const torch::Tensor& images, const torch::Tensor& patch_mask,
                             int depth) {
  torch::NoGradGuard no_grad;
  const bool was_training = coarse->is_training();
  coarse->eval();
  const int p = coarse->config().patch_size;
  std::vector<torch::Tensor> out;
  for (int64_t s = 0; s < images.size(0); s += kInferenceBatch) {
    const auto e = std::min(images.size(0), s + kInferenceBatch);
    out.push_back(coarse->encoder()->forward(to_patch_tokens(images.slice(0, s, e), p),
                                             patch_mask.defined() ? patch_mask.slice(0, s, e) : torch::Tensor{},
                                             depth));
  }
  coarse->train(was_training);
  return torch::cat(out, 0);
}

FerNet train_semantic_stage(const Dataset& train, const ExperimentConfig& config, const ModelPaths& paths) {
  FerConfig fc{config.cnn, config.vit.dim, FusionMode::kCnnOnly, config.select_fraction};
  FerTrainConfig tc = config.fer;
  tc.seed = config.fer.seed + 999;
  auto net = train_fer(train.image_tensor(), train.label_tensor(), {}, {}, fc, tc);
  save_fer(net, paths.semantic_fer());
  return net;
}

ReconStageResult train_recon_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                                   const ModelPaths& paths) {
  models.require_semantic();
  const auto images = train.image_tensor();
  ReconStageResult result;
  models.coarse = train_coarse(images, config.recon, &result.self_assembly_log);
  save_coarse(models.coarse, paths.coarse());

  std::filesystem::remove_all(paths.refine_checkpoints());
  RefineTrainOptions options;
  options.checkpoint_dir = paths.refine_checkpoints();
  for (bool sa : {true, false}) {
    auto rc = config.recon;
    rc.refiner.self_assembly = sa;
    auto& log = sa ? result.self_assembly_log : result.plain_log;
    auto refiner = train_refiner(images, models.coarse, models.semantic, rc, options, &log);
    save_refiner(refiner, paths.refiner(sa));
    (sa ? models.refiner : models.refiner_plain) = refiner;
  }
  result.plain_log.coarse = result.self_assembly_log.coarse;
  return result;
}

SvddModel train_svdd_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                           const ModelPaths& paths, SvddTrainingLog* log) {
  models.require_coarse();
  const auto latents = encode_latents(models.coarse, train.image_tensor(), {}, config.svdd_latent_depth);
  const auto standardizer = fit_standardizer(latents);
  const auto normalized = standardize(latents, standardizer.mean, standardizer.std);
  auto model = train_svdd(normalized.reshape({-1, latents.size(2)}), config.svdd, log);
  model.latent_depth = config.svdd_latent_depth;
  model.input_mean = standardizer.mean;
  model.input_std = standardizer.std;
  save_svdd(model, paths.svdd(), paths.svdd_sidecar());
  models.svdd = model;
  return model;
}

void train_fer_stage(const Dataset& train, const ExperimentConfig& config, PipelineModels& models,
                     const ModelPaths& paths) {
  models.require_coarse();
  models.require_semantic();
  const auto images = train.image_tensor();
  const auto labels = train.label_tensor();
  const auto latents = encode_latents(models.coarse, images);
  const auto keys = batched_attention(models.semantic, images);
  models.fer.clear();
  for (auto mode : kAblationModes) {
    FerConfig fc{config.cnn, config.vit.dim, mode, config.select_fraction};
    for (int k = 0; k < config.noise_seeds; ++k) {
      FerTrainConfig tc = config.fer;
      tc.seed = config.fer.seed + 1000ULL * static_cast<std::uint64_t>(k);
      auto net = train_fer(images, labels, uses_latents(mode) ? latents : torch::Tensor{},
                           mode == FusionMode::kExtractedLatents ? keys : torch::Tensor{}, fc, tc);
      save_fer(net, paths.fer(mode, k));
      models.fer[mode].push_back(net);
    }
  }
}

// ---------------------------------------------------------------------------
// Inference

LatentSet detector_latents(PipelineModels& models, const Image& image) {
  models.require_detector();
  const auto grid = partition(image, models.coarse->config().patch_size);
  return embed_patches(models.coarse->encoder(), grid, nullptr, models.svdd->latent_depth);
}

PatchClassification detect_occlusion(PipelineModels& models, const Image& image) {
  return classify_patches(detector_latents(models, image), *models.svdd);
}

Prediction predict_pipeline(const Image& image, PipelineModels& models, FusionMode mode) {
  models.require_detector();
  models.require_refiner(true);
  models.require_fer(mode);
  if (mode == FusionMode::kExtractedLatents) models.require_semantic();

  auto detection = detect_occlusion(models, image);
  if (detection.mask.all()) {
    throw DomainError("every patch was flagged as occluded; nothing is left to reconstruct from");
  }
  auto rec = models.reconstruction(true).run(image, detection.mask);
  auto& net = models.fer_net(mode);
  auto cnn = cnn_forward(net->cnn(), rec.refined);

  LatentSelection selection;
  if (extracts_latents(mode)) {
    const auto attention =
        mode == FusionMode::kExtractedLatents ? cnn_forward(models.semantic->cnn(), rec.refined).attention
                                              : cnn.attention;
    selection = select_latents(rec.latents, attention, net->config().select_fraction);
  } else if (uses_latents(mode)) {
    selection.keys.resize(rec.latents.size());
    std::iota(selection.keys.begin(), selection.keys.end(), 0);
    selection.values = rec.latents.vectors;
    selection.rule = "all";
  } else {
    selection.rule = "none";
  }

  Prediction out;
  out.distribution = fuse_and_classify(net, cnn.features, selection);
  out.label = out.distribution.label();
  out.diagnostics.mask = detection.mask;
  out.diagnostics.scores = std::move(detection.scores);
  out.diagnostics.psnr_vs_input = psnr(image, rec.refined);
  out.diagnostics.selected_keys = selection.keys;
  out.diagnostics.reconstructed = std::move(rec.refined);
  return out;
}

nlohmann::json prediction_json(const Prediction& p) {
  return {{"label", p.label},
          {"expression", std::string(kExpressionNames[p.label])},
          {"probabilities", p.distribution.probabilities},
          {"occluded_patch_indices", p.diagnostics.mask.occluded_indices()},
          {"selected_keys", p.diagnostics.selected_keys},
          {"psnr_vs_input", number(p.diagnostics.psnr_vs_input)}};
}

// ---------------------------------------------------------------------------
// Evaluation

OccludedImage evaluation_occlusion(const Image& image, std::uint64_t seed, std::size_t index) {
  std::mt19937_64 rng(seed * 1000003ULL + 0x5eedULL + static_cast<std::uint64_t>(index) * 7919ULL);
  return random_sprite_occlusion(image, rng);
}

DetectionEval evaluate_detection(PipelineModels& models, const Dataset& data, const ExperimentConfig& config) {
  models.require_detector();
  std::vector<OcclusionMask> predicted, truth;
  double proportion = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto occ = evaluation_occlusion(data.samples[i].image, config.seed, i);
    predicted.push_back(detect_occlusion(models, occ.image).mask);
    proportion += occ.mask.proportion();
    truth.push_back(std::move(occ.mask));
  }
  return DetectionEval{detection_metrics(predicted, truth), proportion / static_cast<double>(data.size())};
}

ReconstructionEval evaluate_reconstruction(PipelineModels& models, const Dataset& data, const ExperimentConfig& config,
                                           bool self_assembly) {
  models.require_semantic();
  auto recon = models.reconstruction(self_assembly);
  ReconstructionEval out;
  double psnr_sum = 0.0, ssim_sum = 0.0, masked_sum = 0.0, proportion = 0.0;
  int finite = 0;
  std::vector<Image> gts, recs;
  std::vector<OcclusionMask> masks;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& gt = data.samples[i].image;
    auto occ = evaluation_occlusion(gt, config.seed, i);
    if (occ.mask.none() || occ.mask.all()) continue;
    auto rec = recon.run(occ.image, occ.mask);
    const auto q = image_quality(gt, rec.refined);
    if (std::isfinite(q.psnr)) {
      psnr_sum += q.psnr;
      ++finite;
    }
    ssim_sum += q.ssim;
    masked_sum += masked_psnr(gt, rec.refined, occ.mask);
    proportion += occ.mask.proportion();
    gts.push_back(gt);
    recs.push_back(std::move(rec.refined));
    masks.push_back(std::move(occ.mask));
  }
  out.images = static_cast<int>(gts.size());
  if (out.images == 0) throw DataError(DataError::Code::kEmpty, "no evaluable images for reconstruction");
  out.quality.psnr = finite ? psnr_sum / finite : kPsnrIdentical;
  out.quality.ssim = ssim_sum / out.images;
  out.masked_psnr = masked_sum / out.images;
  out.mask_proportion = proportion / out.images;

  torch::NoGradGuard no_grad;
  models.semantic->eval();
  const int p = models.coarse->config().patch_size;
  const int g = models.coarse->config().grid();
  auto z_gt = to_batch(gts);
  auto z_rec = to_batch(recs);
  auto pix = expand_mask(mask_batch(masks), g, g, p);
  out.loss_re = reconstruction_loss(z_gt, z_rec, pix).item<double>();
  auto gt_out = models.semantic->forward(z_gt);
  auto rec_out = models.semantic->forward(z_rec);
  out.loss_c = consistency_loss(rec_out.features, gt_out.features).item<double>();
  out.loss_sc =
      semantic_consistency(torch::softmax(gt_out.logits, 1), torch::softmax(rec_out.logits, 1)).item<double>();
  return out;
}

nlohmann::json reconstruction_json(const ReconstructionEval& e) {
  return {{"psnr", number(e.quality.psnr)},
          {"ssim", e.quality.ssim},
          {"masked_psnr", number(e.masked_psnr)},
          {"losses", {{"re", e.loss_re}, {"c", e.loss_c}, {"sc", e.loss_sc}}},
          {"mask_proportion", e.mask_proportion},
          {"images", e.images}};
}

double confusion_accuracy(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size() || labels.empty()) throw ShapeError("confusion_accuracy: size mismatch");
  std::array<std::array<int64_t, kNumExpressions>, kNumExpressions> confusion{};
  for (std::size_t i = 0; i < labels.size(); ++i) ++confusion.at(labels[i]).at(predictions[i]);
  int64_t trace = 0;
  for (int k = 0; k < kNumExpressions; ++k) trace += confusion[k][k];
  return static_cast<double>(trace) / static_cast<double>(labels.size());
}

SweepResult run_occlusion_sweep(PipelineModels& models, const Dataset& data, const ExperimentConfig& config) {
  models.require_coarse();
  const auto mode = FusionMode::kCnnExtracted;
  auto& net = models.fer_net(mode);
  const int p = models.coarse->config().patch_size;
  SweepResult out;
  out.labels = data.labels();
  out.random.protocol = "random";
  out.grad.protocol = "grad";

  // Grad-CAM of the true class on each clean image.
  std::vector<AttentionMap> cams;
  const auto clean = data.image_tensor();
  const auto clean_latents = encode_latents(models.coarse, clean);
  for (std::size_t i = 0; i < data.size(); ++i) {
    cams.push_back(fer_grad_cam(net, data.samples[i].image, data.samples[i].label,
                                clean_latents.slice(0, i, i + 1)));
  }
  for (double proportion : config.sweep_proportions) {
    for (auto* curve : {&out.random, &out.grad}) {
      std::vector<Image> occluded;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& img = data.samples[i].image;
        occluded.push_back(curve == &out.random
                               ? random_sampling_occlusion(img, proportion,
                                                           config.seed * 1000003ULL + 17ULL * i, p).image
                               : grad_occlusion(img, proportion, cams[i]).image);
      }
      const auto images = to_batch(occluded);
      const auto preds = argmax_rows(mode_logits(models, mode, 0, images, encode_latents(models.coarse, images)));
      curve->proportions.push_back(proportion);
      curve->accuracy.push_back(confusion_accuracy(out.labels, preds));
      curve->predictions.push_back(preds);
    }
  }
  return out;
}

double AblationRow::mean() const {
  return std::accumulate(seed_accuracy.begin(), seed_accuracy.end(), 0.0) / static_cast<double>(seed_accuracy.size());
}

double AblationRow::stddev() const {
  if (seed_accuracy.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : seed_accuracy) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(seed_accuracy.size() - 1));
}

std::string AblationRow::tag() const {
  return std::string(reconstruction ? "reconstruction+" : "") + std::string(to_string(mode));
}

const AblationRow& AblationResult::row(bool reconstruction, FusionMode mode) const {
  for (const auto& r : rows) {
    if (r.reconstruction == reconstruction && r.mode == mode) return r;
  }
  throw DomainError("ablation row not found");
}

AblationResult run_ablation(PipelineModels& models, const Dataset& data, const ExperimentConfig& config) {
  models.require_semantic();
  models.require_detector();
  models.require_refiner(true);
  for (auto mode : kAblationModes) models.require_fer(mode, config.noise_seeds);

  auto recon = models.reconstruction(true);
  const int g = models.coarse->config().grid();
  std::vector<Image> occluded, restored;
  std::vector<OcclusionMask> detected;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto occ = evaluation_occlusion(data.samples[i].image, config.seed, i);
    auto mask = detect_occlusion(models, occ.image).mask;
    // A fully flagged image has nothing to condition on; it is classified as is.
    if (mask.all()) mask = OcclusionMask(g, g);
    restored.push_back(recon.run(occ.image, mask).refined);
    occluded.push_back(std::move(occ.image));
    detected.push_back(std::move(mask));
  }
  const auto occluded_images = to_batch(occluded);
  const auto occluded_latents = encode_latents(models.coarse, occluded_images);
  const auto restored_images = to_batch(restored);
  const auto restored_latents = encode_latents(models.coarse, occluded_images, mask_batch(detected));

  AblationResult out;
  out.labels = data.labels();
  for (bool reconstruction : {false, true}) {
    const auto& images = reconstruction ? restored_images : occluded_images;
    const auto& latents = reconstruction ? restored_latents : occluded_latents;
    for (auto mode : kAblationModes) {
      AblationRow row;
      row.reconstruction = reconstruction;
      row.mode = mode;
      for (int k = 0; k < config.noise_seeds; ++k) {
        auto preds = argmax_rows(mode_logits(models, mode, k, images, latents));
        row.seed_accuracy.push_back(confusion_accuracy(out.labels, preds));
        row.predictions.push_back(std::move(preds));
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

nlohmann::json report_json(const EvaluationReport& report) {
  nlohmann::json j = nlohmann::json::object();
  if (report.detection) {
    j["detection"] = metrics_json(report.detection->metrics);
    j["detection"]["mean_true_proportion"] = report.detection->mean_true_proportion;
  }
  if (report.reconstruction) j["reconstruction"] = reconstruction_json(*report.reconstruction);
  if (report.reconstruction_plain) j["reconstruction_plain"] = reconstruction_json(*report.reconstruction_plain);
  if (report.sweep) {
    j["sweep"] = {{"labels", report.sweep->labels},
                  {"random", curve_json(report.sweep->random)},
                  {"grad", curve_json(report.sweep->grad)}};
  }
  if (report.ablation) {
    auto rows = nlohmann::json::array();
    for (const auto& r : report.ablation->rows) {
      rows.push_back({{"tag", r.tag()},
                      {"reconstruction", r.reconstruction},
                      {"cnn_features", uses_cnn(r.mode)},
                      {"full_latents", uses_latents(r.mode) && !extracts_latents(r.mode)},
                      {"extracted_latents", extracts_latents(r.mode)},
                      {"accuracy", r.mean()},
                      {"seed_accuracy", r.seed_accuracy},
                      {"seed_stddev", r.stddev()},
                      {"predictions", r.predictions}});
    }
    j["ablation"] = {{"labels", report.ablation->labels}, {"rows", rows}};
  }
  return j;
}

void write_sweep_plot(const SweepResult& sweep, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  PlotRange range;
  range.x_max = std::max(0.1, *std::max_element(sweep.random.proportions.begin(), sweep.random.proportions.end()));
  write_png(path, render_line_plot({{sweep.random.proportions, sweep.random.accuracy, {0.12f, 0.35f, 0.85f}},
                                    {sweep.grad.proportions, sweep.grad.accuracy, {0.85f, 0.15f, 0.12f}}},
                                   range));
}

}  // namespace latent_ofer

#include "latent_ofer/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>

#include "latent_ofer/checkpoint.hpp"
#include "latent_ofer/errors.hpp"
#include "latent_ofer/self_assembly.hpp"
#include "latent_ofer/tensor_utils.hpp"

namespace latent_ofer {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// Losses

void LossWeights::validate() const {
  for (double w : {re, c, sc, d}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("loss weights must be finite and nonnegative");
  }
}

torch::Tensor total_loss(const LossTerms& parts, const LossWeights& weights) {
  weights.validate();
  for (const auto* t : {&parts.re, &parts.c, &parts.sc, &parts.d, &parts.df}) {
    if (!t->defined() || !std::isfinite(t->item<double>())) throw DomainError("total_loss: non-finite loss term");
  }
  return weights.re * parts.re + weights.c * parts.c + weights.sc * parts.sc + weights.d * (parts.d + parts.df);
}

double total_loss(double re, double c, double sc, double d, double df, const LossWeights& weights) {
  weights.validate();
  for (double v : {re, c, sc, d, df}) {
    if (!std::isfinite(v)) throw DomainError("total_loss: non-finite loss term");
  }
  return weights.re * re + weights.c * c + weights.sc * sc + weights.d * (d + df);
}

torch::Tensor reconstruction_loss(const torch::Tensor& z_gt, const torch::Tensor& z_rec,
                                  const torch::Tensor& pixel_mask) {
  if (z_gt.sizes() != z_rec.sizes()) throw ShapeError("reconstruction_loss: image shapes differ");
  if (pixel_mask.dim() != 4 || pixel_mask.size(0) != z_gt.size(0) || pixel_mask.size(2) != z_gt.size(2) ||
      pixel_mask.size(3) != z_gt.size(3)) {
    throw ShapeError("reconstruction_loss: mask shape does not match the images");
  }
  auto w = 1.0 + (kMaskedPixelWeight - 1.0) * pixel_mask.to(z_rec.dtype());
  return (w * (z_rec - z_gt).abs()).mean();
}

torch::Tensor consistency_loss(const torch::Tensor& rec_features, const torch::Tensor& gt_features) {
  if (rec_features.sizes() != gt_features.sizes()) throw ShapeError("consistency_loss: feature shapes differ");
  return (rec_features - gt_features.detach()).pow(2).mean();
}

torch::Tensor lsgan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return 0.5 * (real_logits - 1.0).pow(2).mean() + 0.5 * fake_logits.pow(2).mean();
}

torch::Tensor lsgan_generator_loss(const torch::Tensor& fake_logits) {
  return 0.5 * (fake_logits - 1.0).pow(2).mean();
}

torch::Tensor semantic_consistency(const torch::Tensor& p_gt, const torch::Tensor& p_rec) {
  if (p_gt.sizes() != p_rec.sizes() || p_gt.dim() != 2 || p_gt.size(1) != kNumExpressions) {
    throw ShapeError("semantic_consistency: expected matching [B,7] probability rows");
  }
  for (const auto* p : {&p_gt, &p_rec}) {
    const double worst = (p->detach().sum(1) - 1.0).abs().max().item<double>();
    if (worst > 1e-5) throw DomainError("semantic_consistency: probabilities do not sum to 1");
  }
  return -(p_gt.detach() * p_rec.clamp_min(kLogClamp).log()).sum(1).mean();
}

torch::Tensor semantic_consistency_loss(const torch::Tensor& z_gt, const torch::Tensor& z_rec, FerNet& frozen) {
  if (frozen->config().mode != FusionMode::kCnnOnly) {
    throw ModelError("semantic-fer", "the frozen expression network must be CNN-only");
  }
  torch::Tensor p_gt;
  {
    torch::NoGradGuard no_grad;
    p_gt = torch::softmax(frozen->forward(z_gt).logits, 1);
  }
  auto p_rec = torch::softmax(frozen->forward(z_rec).logits, 1);
  return semantic_consistency(p_gt, p_rec);
}

// ---------------------------------------------------------------------------
// Networks

namespace {

nn::Sequential conv_block(int in, int out, int stride) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)), nn::ReLU());
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

CoarseReconstructorImpl::CoarseReconstructorImpl(const VitConfig& config) {
  encoder_ = register_module("encoder", PatchEmbedder(config));
  decoder_ = register_module("decoder", nn::Sequential(nn::Linear(config.dim, 2 * config.dim), nn::GELU(),
                                                       nn::Linear(2 * config.dim, config.token_width())));
}

CoarseReconstructorImpl::Output CoarseReconstructorImpl::forward(const torch::Tensor& images,
                                                                 const torch::Tensor& patch_mask) {
  const auto& cfg = encoder_->config();
  auto latents = encoder_->forward(to_patch_tokens(images, cfg.patch_size), patch_mask);
  auto tokens = torch::sigmoid(decoder_->forward(latents));
  return Output{from_patch_tokens(tokens, cfg.channels, cfg.grid(), cfg.grid(), cfg.patch_size), latents};
}

RefinerImpl::RefinerImpl(const RefinerConfig& config) : config_(config) {
  if (config.patch_size != 16 || config.image_size % config.patch_size != 0) {
    throw ShapeError("refiner expects 16-pixel patches (four stride-2 stages)");
  }
  const int b = config.base_width;
  enc1_ = register_module("enc1", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(4, b, 3).stride(2).padding(1)), nn::ReLU(),
                                                 nn::Conv2d(nn::Conv2dOptions(b, b, 3).padding(1)), nn::ReLU()));
  enc2_ = register_module("enc2", conv_block(b, 2 * b, 2));
  enc3_ = register_module("enc3", conv_block(2 * b, 4 * b, 2));
  enc4_ = register_module("enc4", conv_block(4 * b, 4 * b, 2));
  if (!config.self_assembly) plain_ = register_module("plain", conv_block(4 * b, 4 * b, 1));
  middle_ = register_module("middle", conv_block(4 * b, 4 * b, 1));
  dec3_ = register_module("dec3", conv_block(8 * b, 4 * b, 1));
  dec2_ = register_module("dec2", conv_block(6 * b, 2 * b, 1));
  dec1_ = register_module("dec1", conv_block(3 * b, b, 1));
  dec0_ = register_module("dec0", conv_block(b + 4, std::max(4, b / 2), 1));
  out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(std::max(4, b / 2), 3, 1)));
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor RefinerImpl::forward(const torch::Tensor& composite, const torch::Tensor& pixel_mask,
                                   const std::vector<OcclusionMask>& masks) {
  auto x0 = torch::cat({composite, pixel_mask.to(composite.dtype())}, 1);
  auto e1 = enc1_->forward(x0);
  auto e2 = enc2_->forward(e1);
  auto e3 = enc3_->forward(e2);
  auto e4 = enc4_->forward(e3);
  torch::Tensor bottleneck;
  if (config_.self_assembly) {
    bottleneck = self_assemble(e4, masks);
  } else {
    bottleneck = plain_->forward(e4);
  }
  auto m = middle_->forward(bottleneck);
  auto d3 = dec3_->forward(torch::cat({upsample2(m), e3}, 1));
  auto d2 = dec2_->forward(torch::cat({upsample2(d3), e2}, 1));
  auto d1 = dec1_->forward(torch::cat({upsample2(d2), e1}, 1));
  auto d0 = dec0_->forward(torch::cat({upsample2(d1), x0}, 1));
  // Residual in logit space around the composite, so an untrained
  // refiner passes the coarse reconstruction through.
  return torch::sigmoid(torch::logit(composite, 1e-3) + out_(d0));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int channels, int width) {
  body_ = register_module(
      "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, width, 4).stride(2).padding(1)),
                             nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                             nn::Conv2d(nn::Conv2dOptions(width, 2 * width, 4).stride(2).padding(1)),
                             nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                             nn::Conv2d(nn::Conv2dOptions(2 * width, 1, 3).padding(1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

FeatureDiscriminatorImpl::FeatureDiscriminatorImpl(int channels, int width) {
  body_ = register_module("body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, width, 1)),
                                                 nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                                                 nn::Conv2d(nn::Conv2dOptions(width, 1, 1))));
}

torch::Tensor FeatureDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

AdversarialTerms discriminator_losses(PatchDiscriminator& image_disc, FeatureDiscriminator& feature_disc,
                                      FerNet& frozen, const torch::Tensor& z_rec) {
  auto features = frozen->cnn()->forward(z_rec).features;
  return AdversarialTerms{lsgan_generator_loss(image_disc->forward(z_rec)),
                          lsgan_generator_loss(feature_disc->forward(features))};
}

torch::Tensor compose(const torch::Tensor& input, const torch::Tensor& output, const torch::Tensor& pixel_mask) {
  return torch::where(pixel_mask > 0.5, output, input);
}

// ---------------------------------------------------------------------------
// Single-image operations

CoarseResult coarse_reconstruct(CoarseReconstructor& model, const PatchGrid& grid, const OcclusionMask& mask) {
  const auto& cfg = model->config();
  if (grid.grid_rows != cfg.grid() || grid.grid_cols != cfg.grid() || grid.patch_size != cfg.patch_size) {
    throw ShapeError("coarse_reconstruct: grid does not match the model");
  }
  if (mask.rows() != grid.grid_rows || mask.cols() != grid.grid_cols) {
    throw ShapeError("coarse_reconstruct: mask does not match the grid");
  }
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  auto out = model->forward(to_tensor(reassemble(grid)).unsqueeze(0), mask_tensor(mask).unsqueeze(0));
  model->train(was_training);
  return CoarseResult{to_image(out.images[0]),
                      LatentSet{out.latents[0].contiguous(), grid.grid_rows, grid.grid_cols,
                                LatentSource::kReconstructionPass}};
}

Image refine(Refiner& model, const Image& coarse, const PatchGrid& grid, const OcclusionMask& mask) {
  if (mask.rows() != grid.grid_rows || mask.cols() != grid.grid_cols) {
    throw ShapeError("refine: mask does not match the grid");
  }
  const Image input = reassemble(grid);
  if (mask.none()) return input;
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  auto x = to_tensor(input).unsqueeze(0);
  auto pix = expand_mask(mask_tensor(mask).unsqueeze(0), grid.grid_rows, grid.grid_cols, grid.patch_size);
  auto composite = compose(x, to_tensor(coarse).unsqueeze(0), pix);
  auto out = model->forward(composite, pix, {mask});
  model->train(was_training);
  return to_image(compose(x, out, pix).clamp(0.0, 1.0)[0]);
}

ReconstructionResult ReconstructionModel::run(const Image& input, const OcclusionMask& mask) {
  if (!coarse || !refiner) throw ModelError("reconstruct", "reconstruction model is not loaded");
  const auto grid = partition(input, coarse->config().patch_size);
  auto c = coarse_reconstruct(coarse, grid, mask);
  auto refined = refine(refiner, c.image, grid, mask);
  return ReconstructionResult{std::move(c.image), std::move(refined), std::move(c.latents)};
}

// ---------------------------------------------------------------------------
// Training

OcclusionMask random_training_mask(int rows, int cols, double min_proportion, double max_proportion,
                                   std::mt19937_64& rng) {
  const int n = rows * cols;
  std::uniform_real_distribution<double> prop(min_proportion, max_proportion);
  const int target = std::clamp(static_cast<int>(std::lround(prop(rng) * n)), 1, n - 1);
  OcclusionMask mask(rows, cols);
  if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < target; ++i) mask.set(order[i], true);
    return mask;
  }
  std::uniform_int_distribution<int> extent(1, 3);
  while (mask.count() < target) {
    const int h = std::min(extent(rng), rows);
    const int w = std::min(extent(rng), cols);
    const int r0 = std::uniform_int_distribution<int>(0, rows - h)(rng);
    const int c0 = std::uniform_int_distribution<int>(0, cols - w)(rng);
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) {
        if (mask.count() < target) mask.set(r * cols + c, true);
      }
    }
  }
  return mask;
}

namespace {

struct EpochPlan {
  std::vector<int64_t> order;
  std::vector<OcclusionMask> masks;  // one per sample, indexed by sample id
};

EpochPlan plan_epoch(int64_t n, int rows, int cols, const ReconTrainConfig& config, std::uint64_t stream,
                     int epoch) {
  std::mt19937_64 rng(config.seed * 1000003ULL + stream * 7919ULL + static_cast<std::uint64_t>(epoch));
  EpochPlan plan;
  plan.order.resize(n);
  std::iota(plan.order.begin(), plan.order.end(), 0);
  std::shuffle(plan.order.begin(), plan.order.end(), rng);
  plan.masks.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    plan.masks.push_back(random_training_mask(rows, cols, config.mask_min, config.mask_max, rng));
  }
  return plan;
}

nlohmann::json losses_to_json(const std::vector<EpochLosses>& log) {
  auto out = nlohmann::json::array();
  for (const auto& e : log) {
    out.push_back({{"epoch", e.epoch}, {"total", e.total}, {"re", e.re}, {"c", e.c},
                   {"sc", e.sc}, {"d", e.d}, {"df", e.df}});
  }
  return out;
}

std::vector<EpochLosses> losses_from_json(const nlohmann::json& j) {
  std::vector<EpochLosses> out;
  for (const auto& e : j) {
    out.push_back({e.at("epoch").get<int>(), e.at("total").get<double>(), e.at("re").get<double>(),
                   e.at("c").get<double>(), e.at("sc").get<double>(), e.at("d").get<double>(),
                   e.at("df").get<double>()});
  }
  return out;
}

nlohmann::json vit_to_json(const VitConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"channels", c.channels},
          {"dim", c.dim}, {"depth", c.depth}, {"heads", c.heads}, {"mlp_ratio", c.mlp_ratio},
          {"positional", c.positional}};
}

VitConfig vit_from_json(const nlohmann::json& j) {
  VitConfig c;
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.channels = j.at("channels");
  c.dim = j.at("dim");
  c.depth = j.at("depth");
  c.heads = j.at("heads");
  c.mlp_ratio = j.at("mlp_ratio");
  c.positional = j.at("positional");
  return c;
}

nlohmann::json refiner_to_json(const RefinerConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"base_width", c.base_width},
          {"self_assembly", c.self_assembly}};
}

RefinerConfig refiner_from_json(const nlohmann::json& j) {
  RefinerConfig c;
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.base_width = j.at("base_width");
  c.self_assembly = j.at("self_assembly");
  return c;
}

// Newest "<stem>_epoch_<k>.ckpt" in dir, or -1.
int newest_epoch(const std::filesystem::path& dir, const std::string& stem) {
  if (!std::filesystem::exists(dir)) return -1;
  const std::regex pattern(stem + "_epoch_([0-9]+)\\.ckpt");
  int best = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) best = std::max(best, std::stoi(m[1]));
  }
  return best;
}

std::filesystem::path epoch_path(const std::filesystem::path& dir, const std::string& stem, int epoch) {
  return dir / (stem + "_epoch_" + std::to_string(epoch) + ".ckpt");
}

class FreezeGuard {
 public:
  explicit FreezeGuard(torch::nn::Module& module) : module_(module), was_training_(module.is_training()) {
    for (auto& p : module_.parameters()) {
      flags_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
    module_.eval();
  }
  ~FreezeGuard() {
    auto params = module_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(flags_[i]);
    module_.train(was_training_);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  torch::nn::Module& module_;
  bool was_training_;
  std::vector<bool> flags_;
};

}  // namespace

CoarseReconstructor train_coarse(const torch::Tensor& images, const ReconTrainConfig& config,
                                 ReconTrainingLog* log) {
  if (!images.defined() || images.size(0) == 0) throw DataError(DataError::Code::kEmpty, "train_coarse: empty dataset");
  torch::manual_seed(config.seed);
  CoarseReconstructor model(config.vit);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const int g = config.vit.grid();
  const int p = config.vit.patch_size;
  const auto n = images.size(0);
  model->train();
  for (int epoch = 0; epoch < config.coarse_epochs; ++epoch) {
    const auto plan = plan_epoch(n, g, g, config, 1, epoch);
    double total = 0.0;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min<int64_t>(n, start + config.batch_size);
      std::vector<int64_t> ids(plan.order.begin() + start, plan.order.begin() + stop);
      std::vector<OcclusionMask> masks;
      for (auto id : ids) masks.push_back(plan.masks[id]);
      auto gt = images.index_select(0, torch::tensor(ids, torch::kInt64));
      auto pm = mask_batch(masks);
      auto pix = expand_mask(pm, g, g, p);
      auto input = compose(gt, torch::full_like(gt, kOcclusionFill), pix);
      opt.zero_grad();
      auto out = model->forward(input, pm);
      auto loss = reconstruction_loss(gt, out.images, pix);
      loss.backward();
      opt.step();
      total += loss.item<double>() * static_cast<double>(stop - start);
    }
    if (log) log->coarse.push_back(EpochLosses{epoch, total / n, total / n, 0, 0, 0, 0});
  }
  model->eval();
  return model;
}

Refiner train_refiner(const torch::Tensor& images, CoarseReconstructor& coarse, FerNet& frozen_fer,
                      const ReconTrainConfig& config, const RefineTrainOptions& options, ReconTrainingLog* log) {
  if (!images.defined() || images.size(0) == 0) throw DataError(DataError::Code::kEmpty, "train_refiner: empty dataset");
  config.weights.validate();
  torch::manual_seed(config.seed + 17);
  Refiner refiner(config.refiner);
  PatchDiscriminator image_disc(3);
  FeatureDiscriminator feature_disc(frozen_fer->config().cnn.out_channels());
  torch::optim::Adam opt(refiner->parameters(), torch::optim::AdamOptions(config.refine_learning_rate));
  std::vector<torch::Tensor> disc_params = image_disc->parameters();
  for (auto& t : feature_disc->parameters()) disc_params.push_back(t);
  torch::optim::Adam disc_opt(disc_params, torch::optim::AdamOptions(config.disc_learning_rate).betas({0.5, 0.999}));

  std::vector<EpochLosses> history;
  int start_epoch = 0;
  const std::string stem = config.refiner.self_assembly ? "refine" : "refine_plain";
  if (options.checkpoint_dir) {
    const int newest = newest_epoch(*options.checkpoint_dir, stem);
    if (newest >= 0) {
      const auto ckpt = load_checkpoint(epoch_path(*options.checkpoint_dir, stem, newest));
      restore_module(ckpt, *refiner, "refiner.");
      restore_module(ckpt, *image_disc, "image_disc.");
      restore_module(ckpt, *feature_disc, "feature_disc.");
      restore_adam(ckpt, opt, "opt.");
      restore_adam(ckpt, disc_opt, "disc_opt.");
      history = losses_from_json(ckpt.meta.at("history"));
      start_epoch = newest + 1;
    }
  }

  FreezeGuard freeze_fer(*frozen_fer);
  FreezeGuard freeze_coarse(*coarse);
  const int g = config.vit.grid();
  const int p = config.vit.patch_size;
  const auto n = images.size(0);
  int ran = 0;
  for (int epoch = start_epoch; epoch < config.refine_epochs; ++epoch) {
    if (options.max_epochs_this_call >= 0 && ran >= options.max_epochs_this_call) break;
    const auto plan = plan_epoch(n, g, g, config, 2, epoch);
    refiner->train();
    EpochLosses sums{epoch};
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min<int64_t>(n, start + config.batch_size);
      std::vector<int64_t> ids(plan.order.begin() + start, plan.order.begin() + stop);
      std::vector<OcclusionMask> masks;
      for (auto id : ids) masks.push_back(plan.masks[id]);
      auto gt = images.index_select(0, torch::tensor(ids, torch::kInt64));
      auto pm = mask_batch(masks);
      auto pix = expand_mask(pm, g, g, p);
      auto input = compose(gt, torch::full_like(gt, kOcclusionFill), pix);
      torch::Tensor composite, real_features, p_gt;
      {
        torch::NoGradGuard no_grad;
        composite = compose(input, coarse->forward(input, pm).images, pix);
        auto real = frozen_fer->forward(gt);
        real_features = real.features;
        p_gt = torch::softmax(real.logits, 1);
      }
      auto out = refiner->forward(composite, pix, masks);
      auto z_rec = compose(input, out, pix);

      // Discriminator update.
      {
        auto fake = z_rec.detach();
        torch::Tensor fake_features;
        {
          torch::NoGradGuard no_grad;
          fake_features = frozen_fer->cnn()->forward(fake).features;
        }
        disc_opt.zero_grad();
        auto d_loss = lsgan_discriminator_loss(image_disc->forward(gt), image_disc->forward(fake)) +
                      lsgan_discriminator_loss(feature_disc->forward(real_features),
                                               feature_disc->forward(fake_features));
        d_loss.backward();
        disc_opt.step();
      }

      // Generator update.
      auto rec = frozen_fer->forward(z_rec);
      LossTerms terms;
      terms.re = reconstruction_loss(gt, out, pix);
      terms.c = consistency_loss(rec.features, real_features);
      terms.sc = semantic_consistency(p_gt, torch::softmax(rec.logits, 1));
      terms.d = lsgan_generator_loss(image_disc->forward(z_rec));
      terms.df = lsgan_generator_loss(feature_disc->forward(rec.features));
      auto loss = total_loss(terms, config.weights);
      opt.zero_grad();
      loss.backward();
      opt.step();

      const double bs = static_cast<double>(stop - start);
      sums.total += loss.item<double>() * bs;
      sums.re += terms.re.item<double>() * bs;
      sums.c += terms.c.item<double>() * bs;
      sums.sc += terms.sc.item<double>() * bs;
      sums.d += terms.d.item<double>() * bs;
      sums.df += terms.df.item<double>() * bs;
    }
    for (double* v : {&sums.total, &sums.re, &sums.c, &sums.sc, &sums.d, &sums.df}) *v /= static_cast<double>(n);
    history.push_back(sums);
    ++ran;
    if (options.checkpoint_dir) {
      Checkpoint ckpt;
      ckpt.meta = {{"kind", "refiner-training"}, {"epoch", epoch}, {"history", losses_to_json(history)},
                   {"refiner", refiner_to_json(config.refiner)}};
      append_module(ckpt, *refiner, "refiner.");
      append_module(ckpt, *image_disc, "image_disc.");
      append_module(ckpt, *feature_disc, "feature_disc.");
      append_adam(ckpt, opt, "opt.");
      append_adam(ckpt, disc_opt, "disc_opt.");
      save_checkpoint(epoch_path(*options.checkpoint_dir, stem, epoch), ckpt);
    }
  }
  if (log) log->refine = history;
  refiner->eval();
  return refiner;
}

void save_coarse(const CoarseReconstructor& model, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "coarse"}, {"vit", vit_to_json(model->config())}};
  append_module(ckpt, *model);
  save_checkpoint(path, ckpt);
}

CoarseReconstructor load_coarse(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "coarse") throw ModelError("reconstruct", "not a coarse checkpoint: " + path.string());
  CoarseReconstructor model(vit_from_json(ckpt.meta.at("vit")));
  restore_module(ckpt, *model);
  model->eval();
  return model;
}

void save_refiner(const Refiner& model, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "refiner"}, {"refiner", refiner_to_json(model->config())}};
  append_module(ckpt, *model);
  save_checkpoint(path, ckpt);
}

Refiner load_refiner(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "refiner") throw ModelError("reconstruct", "not a refiner checkpoint: " + path.string());
  Refiner model(refiner_from_json(ckpt.meta.at("refiner")));
  restore_module(ckpt, *model);
  model->eval();
  return model;
}

}  // namespace latent_ofer

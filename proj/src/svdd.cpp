#include "latent_ofer/svdd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "latent_ofer/checkpoint.hpp"
#include "latent_ofer/errors.hpp"

namespace latent_ofer {

namespace nn = torch::nn;

SvddNetImpl::SvddNetImpl(int in_dim, int hidden, int out_dim) : in_dim_(in_dim) {
  fc1_ = register_module("fc1", nn::Linear(nn::LinearOptions(in_dim, hidden).bias(false)));
  fc2_ = register_module("fc2", nn::Linear(nn::LinearOptions(hidden, out_dim).bias(false)));
}

torch::Tensor SvddNetImpl::forward(const torch::Tensor& x) const {
  return fc2_.ptr()->forward(torch::leaky_relu(fc1_.ptr()->forward(x), 0.1));
}

std::vector<torch::Tensor> SvddNetImpl::weights() const { return {fc1_->weight, fc2_->weight}; }

torch::Tensor init_center(const torch::Tensor& mapped) {
  if (!mapped.defined() || mapped.dim() != 2 || mapped.size(0) == 0) {
    throw DomainError("init_center needs a nonempty [n,d] batch");
  }
  auto c = mapped.detach().mean(0);
  auto small = c.abs() < kCenterClamp;
  auto sign = torch::where(c < 0, torch::full_like(c, -kCenterClamp), torch::full_like(c, kCenterClamp));
  return torch::where(small, sign, c);
}

torch::Tensor svdd_loss(const torch::Tensor& latents, const SvddModel& model) {
  if (!model.net || !model.center.defined()) throw ModelError("svdd", "model is not initialized");
  if (latents.dim() != 2 || latents.size(1) != model.latent_dim()) {
    throw ShapeError("svdd_loss: latent dimension mismatch");
  }
  auto mapped = model.net->forward(latents);
  auto data_term = (mapped - model.center.to(mapped.dtype())).pow(2).sum(1).mean();
  auto reg = torch::zeros({}, mapped.options());
  for (const auto& w : model.net->weights()) reg = reg + w.pow(2).sum();
  return data_term + 0.5 * model.weight_decay * reg;
}

torch::Tensor svdd_distances(const torch::Tensor& latents, const SvddModel& model) {
  if (latents.dim() != 2 || latents.size(1) != model.latent_dim()) {
    throw ShapeError("svdd: latent dimension mismatch");
  }
  torch::NoGradGuard no_grad;
  auto mapped = model.net->forward(latents);
  return (mapped - model.center.to(mapped.dtype())).pow(2).sum(1).sqrt();
}

SvddModel train_svdd(const torch::Tensor& unoccluded_latents, const SvddConfig& config, SvddTrainingLog* log) {
  if (!unoccluded_latents.defined() || unoccluded_latents.dim() != 2 || unoccluded_latents.size(0) == 0) {
    throw DomainError("train_svdd needs a nonempty [n,D] latent set");
  }
  if (!(config.weight_decay > 0.0)) throw DomainError("svdd weight decay must be positive");
  torch::manual_seed(config.seed);
  const auto n = unoccluded_latents.size(0);
  const int dim = static_cast<int>(unoccluded_latents.size(1));

  SvddModel model;
  model.net = SvddNet(dim, config.hidden, config.out_dim);
  model.weight_decay = config.weight_decay;
  model.quantile = config.quantile;
  model.n_train = n;
  {
    torch::NoGradGuard no_grad;
    model.center = init_center(model.net->forward(unoccluded_latents));
  }

  torch::optim::Adam optimizer(model.net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    auto index = torch::tensor(order, torch::kInt64);
    double total = 0.0;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min<int64_t>(n, start + config.batch_size);
      auto batch = unoccluded_latents.index_select(0, index.slice(0, start, stop));
      optimizer.zero_grad();
      auto loss = svdd_loss(batch, model);
      loss.backward();
      optimizer.step();
      total += loss.item<double>() * static_cast<double>(stop - start);
    }
    if (log) log->epoch_loss.push_back(total / static_cast<double>(n));
  }

  auto d = svdd_distances(unoccluded_latents, model).to(torch::kFloat64).contiguous();
  std::vector<double> distances(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  model.radius = determine_radius(distances, config.quantile);
  return model;
}

double determine_radius(std::span<const double> train_distances, double quantile) {
  if (train_distances.empty()) throw DomainError("determine_radius: empty distance list");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw DomainError("radius quantile must lie in (0,1]");
  std::vector<double> sorted(train_distances.begin(), train_distances.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = static_cast<double>(sorted.size() - 1) * quantile;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

PatchStandardizer fit_standardizer(const torch::Tensor& latents) {
  if (!latents.defined() || latents.dim() != 3 || latents.size(0) < 2) {
    throw DomainError("fit_standardizer needs [N,T,D] latents with N >= 2");
  }
  auto x = latents.detach();
  return {x.mean(0), x.std(0, /*unbiased=*/true) + 1e-3};
}

torch::Tensor standardize(const torch::Tensor& latents, const torch::Tensor& mean, const torch::Tensor& std) {
  if (mean.sizes() != std.sizes() || latents.dim() < 2 ||
      latents.sizes().slice(latents.dim() - 2) != mean.sizes()) {
    throw ShapeError("standardize: latent shape does not match the standardizer");
  }
  return (latents - mean) / std;
}

PatchClassification classify_patches(const LatentSet& latents, const SvddModel& model) {
  check_latent_dim(latents, model.latent_dim());
  if (latents.rows * latents.cols != latents.size()) throw ShapeError("latent set does not match its grid");
  auto x = latents.vectors;
  if (model.input_mean.defined()) x = standardize(x, model.input_mean, model.input_std);
  auto d = svdd_distances(x, model).to(torch::kFloat64).contiguous();
  PatchClassification out{OcclusionMask(latents.rows, latents.cols), {}};
  const double* dist = d.data_ptr<double>();
  for (int i = 0; i < latents.size(); ++i) {
    const bool occluded = dist[i] > model.radius;
    out.mask.set(i, occluded);
    out.scores.push_back(PatchScore{i, dist[i], occluded});
  }
  return out;
}

DetectionMetrics detection_metrics(std::span<const OcclusionMask> predicted, std::span<const OcclusionMask> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("detection_metrics: mask count mismatch");
  DetectionMetrics m;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const auto& p = predicted[k];
    const auto& t = truth[k];
    if (p.rows() != t.rows() || p.cols() != t.cols()) throw ShapeError("detection_metrics: mask shape mismatch");
    for (int i = 0; i < p.size(); ++i) {
      if (p[i] && t[i]) ++m.true_positive;
      else if (p[i] && !t[i]) ++m.false_positive;
      else if (!p[i] && t[i]) ++m.false_negative;
      else ++m.true_negative;
    }
  }
  const auto total = m.true_positive + m.false_positive + m.true_negative + m.false_negative;
  m.accuracy = total == 0 ? 1.0 : static_cast<double>(m.true_positive + m.true_negative) / static_cast<double>(total);
  const auto pred_pos = m.true_positive + m.false_positive;
  const auto real_pos = m.true_positive + m.false_negative;
  if (pred_pos == 0 || real_pos == 0) m.degenerate = true;
  m.precision = pred_pos == 0 ? 1.0 : static_cast<double>(m.true_positive) / static_cast<double>(pred_pos);
  m.recall = real_pos == 0 ? 1.0 : static_cast<double>(m.true_positive) / static_cast<double>(real_pos);
  return m;
}

DetectionMetrics detection_metrics(const OcclusionMask& predicted, const OcclusionMask& truth) {
  return detection_metrics(std::span<const OcclusionMask>(&predicted, 1), std::span<const OcclusionMask>(&truth, 1));
}

void save_svdd(const SvddModel& model, const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& sidecar_path) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "svdd"},
               {"latent_dim", model.latent_dim()},
               {"hidden", model.net->weights()[0].size(0)},
               {"out_dim", model.center.size(0)},
               {"latent_depth", model.latent_depth},
               {"n_train", model.n_train}};
  append_module(ckpt, *model.net, "net.");
  ckpt.tensors.push_back({"center", model.center});
  if (model.input_mean.defined()) {
    ckpt.tensors.push_back({"input_mean", model.input_mean});
    ckpt.tensors.push_back({"input_std", model.input_std});
  }
  save_checkpoint(checkpoint_path, ckpt);

  auto c = model.center.to(torch::kFloat64).contiguous();
  nlohmann::json sidecar{{"center", std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel())},
                         {"radius", model.radius},
                         {"quantile", model.quantile},
                         {"lambda", model.weight_decay}};
  std::ofstream out(sidecar_path);
  if (!out) throw DataError(DataError::Code::kUnwritable, "cannot write " + sidecar_path.string());
  out << sidecar.dump(2) << "\n";
}

SvddModel load_svdd(const std::filesystem::path& checkpoint_path, const std::filesystem::path& sidecar_path) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  std::ifstream in(sidecar_path);
  if (!in) throw DataError(DataError::Code::kMissingFile, "svdd sidecar not found: " + sidecar_path.string());
  const auto sidecar = nlohmann::json::parse(in);
  SvddModel model;
  model.net = SvddNet(ckpt.meta.at("latent_dim").get<int>(), ckpt.meta.at("hidden").get<int>(),
                      ckpt.meta.at("out_dim").get<int>());
  restore_module(ckpt, *model.net, "net.");
  model.center = torch::tensor(sidecar.at("center").get<std::vector<double>>(), torch::kFloat64).to(torch::kFloat32);
  model.radius = sidecar.at("radius").get<double>();
  model.quantile = sidecar.at("quantile").get<double>();
  model.weight_decay = sidecar.at("lambda").get<double>();
  model.latent_depth = ckpt.meta.value("latent_depth", -1);
  model.n_train = ckpt.meta.value("n_train", int64_t{0});
  if (ckpt.contains("input_mean")) {
    model.input_mean = ckpt.get("input_mean").clone();
    model.input_std = ckpt.get("input_std").clone();
  }
  return model;
}

}  // namespace latent_ofer

#include "latent_ofer/self_assembly.hpp"

#include <cmath>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

double similarity(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("similarity: dimension mismatch");
  double dot = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dot += p[i] * q[i];
    pp += p[i] * p[i];
    qq += q[i] * q[i];
  }
  if (pp == 0.0 || qq == 0.0) return 0.0;
  return dot / (std::sqrt(pp) * std::sqrt(qq));
}

torch::Tensor similarity(const torch::Tensor& p, const torch::Tensor& q) {
  if (p.sizes() != q.sizes()) throw ShapeError("similarity: dimension mismatch");
  auto np = p.norm();
  auto nq = q.norm();
  if (np.item<double>() == 0.0 || nq.item<double>() == 0.0) return torch::zeros({}, p.options());
  return (p * q).sum() / (np * nq);
}

AssemblyState::AssemblyState(const torch::Tensor& features, const OcclusionMask& mask_) : mask(mask_) {
  if (features.dim() != 3 || features.size(1) != mask_.rows() || features.size(2) != mask_.cols()) {
    throw ShapeError("self-assembly: feature grid does not match the mask");
  }
  rows = mask_.rows();
  cols = mask_.cols();
  auto flat = features.flatten(1).t();  // [N,C]
  reference.reserve(rows * cols);
  for (int i = 0; i < rows * cols; ++i) reference.push_back(flat[i]);
  working = reference;
  order = mask.occluded_indices();
  for (int i = 0; i < rows * cols; ++i) {
    if (!mask[i]) known.push_back(i);
  }
  if (!known.empty()) {
    std::vector<torch::Tensor> rows_k;
    for (int i : known) rows_k.push_back(working[i]);
    known_matrix = torch::stack(rows_k);
  }
}

torch::Tensor AssemblyState::assembled() const {
  return torch::stack(working, 1).reshape({-1, rows, cols});
}

torch::Tensor symmetric_patch(const AssemblyState& state, int index) {
  const int r = index / state.cols;
  const int c = state.cols - 1 - index % state.cols;
  std::vector<torch::Tensor> neighborhood;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const int rr = r + dr;
      const int cc = c + dc;
      if (rr < 0 || rr >= state.rows || cc < 0 || cc >= state.cols) continue;
      neighborhood.push_back(state.working[rr * state.cols + cc]);
    }
  }
  return torch::stack(neighborhood).mean(0);
}

KnownPatch find_known_patch(const AssemblyState& state, int index) {
  if (state.known.empty()) throw DomainError("self-assembly: no unmasked patch to match against");
  const auto& p = state.reference[index];
  // Similarities against every unmasked patch at once; argmax on the host
  // so ties resolve to the lowest index.
  auto norms = state.known_matrix.norm(2, 1) * p.norm();
  auto sims = torch::where(norms > 0, torch::mv(state.known_matrix, p) / norms.clamp_min(1e-30),
                           torch::zeros_like(norms));
  auto host = sims.detach().to(torch::kFloat64).contiguous();
  const double* s = host.data_ptr<double>();
  std::size_t best = 0;
  for (std::size_t k = 1; k < state.known.size(); ++k) {
    if (s[k] > s[best]) best = k;
  }
  const int idx = state.known[best];
  return KnownPatch{idx, state.working[idx], sims[static_cast<int64_t>(best)]};
}

AssemblyStep self_assembly_step(AssemblyState& state, int step) {
  if (step < 0 || step >= static_cast<int>(state.order.size())) throw DomainError("self-assembly: bad step");
  const int index = state.order[step];
  const auto& p = state.reference[index];

  const auto p_sym = symmetric_patch(state, index);
  const auto known = find_known_patch(state, index);
  auto s_sym = similarity(p, p_sym).clamp_min(0.0);
  auto s_known = known.similarity.clamp_min(0.0);
  auto s_prev = torch::zeros({}, p.options());
  if (step > 0) s_prev = similarity(p, state.previous).clamp_min(0.0);

  AssemblyStep out;
  out.index = index;
  auto denom = s_sym + s_known + s_prev;
  const double d = denom.item<double>();
  if (d <= 0.0) {
    out.patch = p;
    out.fallback = true;
  } else {
    auto mixed = s_sym * p_sym + s_known * known.patch;
    if (step > 0) mixed = mixed + s_prev * state.previous;
    out.patch = mixed / denom;
    out.weight_sym = s_sym.item<double>() / d;
    out.weight_known = s_known.item<double>() / d;
    out.weight_previous = s_prev.item<double>() / d;
  }
  state.working[index] = out.patch;
  state.previous = out.patch;
  state.next_step = step + 1;
  return out;
}

torch::Tensor self_assemble(const torch::Tensor& features, const std::vector<OcclusionMask>& masks) {
  if (features.dim() != 4 || features.size(0) != static_cast<int64_t>(masks.size())) {
    throw ShapeError("self_assemble: batch and mask count differ");
  }
  std::vector<torch::Tensor> out;
  out.reserve(masks.size());
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const auto& m = masks[b];
    if (m.none() || m.all()) {
      out.push_back(features[static_cast<int64_t>(b)]);
      continue;
    }
    AssemblyState state(features[static_cast<int64_t>(b)], m);
    for (int step = 0; step < static_cast<int>(state.order.size()); ++step) self_assembly_step(state, step);
    out.push_back(state.assembled());
  }
  return torch::stack(out);
}

}  // namespace latent_ofer

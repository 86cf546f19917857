#pragma once

#include <torch/torch.h>

#include <optional>
#include <span>
#include <vector>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

// Normalized cross-correlation <p, q> / (|p| |q|). Defined as 0 when
// either vector is zero.
double similarity(std::span<const double> p, std::span<const double> q);
// Differentiable version on 1-D tensors; returns a 0-d tensor.
torch::Tensor similarity(const torch::Tensor& p, const torch::Tensor& q);

// Working state of the self-assembly layer for one feature grid.
//
// `reference` holds the incoming features; inside the mask those are the
// coarse transformer reconstruction and serve as the similarity reference
// p for each generated patch. `working` starts as a copy and receives each
// generated patch in turn. Generation follows raster order over the
// masked indices.
struct AssemblyState {
  AssemblyState(const torch::Tensor& features, const OcclusionMask& mask);

  int rows = 0;
  int cols = 0;
  OcclusionMask mask;
  std::vector<int> order;
  std::vector<torch::Tensor> reference;  // per patch, [C]
  std::vector<torch::Tensor> working;    // per patch, [C]
  std::vector<int> known;                // unmasked indices, ascending
  torch::Tensor known_matrix;            // [K,C] rows of `working` at `known`
  torch::Tensor previous;                // last generated patch, undefined before step 0
  int next_step = 0;

  // [C,rows,cols] from the working copy.
  torch::Tensor assembled() const;
};

// Mean over the 3x3 (edge-truncated) neighborhood of the horizontally
// mirrored position of `index`, read from the working copy.
torch::Tensor symmetric_patch(const AssemblyState& state, int index);

struct KnownPatch {
  int index = -1;
  torch::Tensor patch;       // [C]
  torch::Tensor similarity;  // 0-d, S(p, p_k)
};

// Most similar unmasked patch to the reference at `index`; ties go to the
// lowest index. Throws DomainError on a fully masked grid.
KnownPatch find_known_patch(const AssemblyState& state, int index);

struct AssemblyStep {
  int index = -1;
  torch::Tensor patch;  // p_i
  // Normalized, clamped weights (sym, known, previous); zero on fallback.
  double weight_sym = 0.0;
  double weight_known = 0.0;
  double weight_previous = 0.0;
  bool fallback = false;
};

// Generates the patch for step `step` (0-based position in `state.order`):
//   p_i = (S_sym p_s + S_known p_k + S_prev p_prev) / (S_sym + S_known + S_prev)
// with each S clamped to >= 0 and S_prev = 0 on the first step. A zero
// denominator keeps the reference patch. Writes p_i into the working copy.
AssemblyStep self_assembly_step(AssemblyState& state, int step);

// Runs every step on each grid of a batch. features [B,C,R,Cc]; grids
// with an empty mask pass through unchanged, as do fully masked grids.
torch::Tensor self_assemble(const torch::Tensor& features, const std::vector<OcclusionMask>& masks);

}  // namespace latent_ofer

#pragma once

#include <torch/torch.h>

#include <vector>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

// HWC Image <-> CHW float tensor.
torch::Tensor to_tensor(const Image& image);
Image to_image(const torch::Tensor& chw);

// Stacks images into [B,C,H,W].
torch::Tensor to_batch(const std::vector<Image>& images);

// [B,C,H,W] -> [B,N,C*P*P] tokens in raster order, and back.
torch::Tensor to_patch_tokens(const torch::Tensor& images, int patch_size);
torch::Tensor from_patch_tokens(const torch::Tensor& tokens, int channels, int rows, int cols,
                                int patch_size);

// Bool [N] and stacked bool [B,N].
torch::Tensor mask_tensor(const OcclusionMask& mask);
torch::Tensor mask_batch(const std::vector<OcclusionMask>& masks);

// Per-pixel mask [B,1,H,W] (1 = occluded) from patch masks [B,N].
torch::Tensor expand_mask(const torch::Tensor& patch_mask, int rows, int cols, int patch_size);

}  // namespace latent_ofer

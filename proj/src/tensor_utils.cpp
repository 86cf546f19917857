#include "latent_ofer/tensor_utils.hpp"

namespace latent_ofer {

torch::Tensor to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.pixels().data()),
                              {image.height(), image.width(), image.channels()}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

Image to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ShapeError("expected a CHW tensor");
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image image(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)));
  std::copy_n(hwc.data_ptr<float>(), hwc.numel(), image.pixels().data());
  return image;
}

torch::Tensor to_batch(const std::vector<Image>& images) {
  std::vector<torch::Tensor> items;
  items.reserve(images.size());
  for (const auto& img : images) items.push_back(to_tensor(img));
  return torch::stack(items);
}

torch::Tensor to_patch_tokens(const torch::Tensor& images, int patch_size) {
  const auto b = images.size(0);
  const auto c = images.size(1);
  if (images.size(2) % patch_size != 0 || images.size(3) % patch_size != 0) {
    throw ShapeError("image batch is not patch-aligned");
  }
  // [B,C,R,Cc,P,P] -> [B,R,Cc,C,P,P]
  auto t = images.unfold(2, patch_size, patch_size).unfold(3, patch_size, patch_size);
  const auto rows = t.size(2);
  const auto cols = t.size(3);
  return t.permute({0, 2, 3, 1, 4, 5}).reshape({b, rows * cols, c * patch_size * patch_size});
}

torch::Tensor from_patch_tokens(const torch::Tensor& tokens, int channels, int rows, int cols,
                                int patch_size) {
  const auto b = tokens.size(0);
  auto t = tokens.reshape({b, rows, cols, channels, patch_size, patch_size});
  return t.permute({0, 3, 1, 4, 2, 5}).reshape({b, channels, rows * patch_size, cols * patch_size});
}

torch::Tensor mask_tensor(const OcclusionMask& mask) {
  auto out = torch::zeros({mask.size()}, torch::kBool);
  auto acc = out.accessor<bool, 1>();
  for (int i = 0; i < mask.size(); ++i) acc[i] = mask[i];
  return out;
}

torch::Tensor mask_batch(const std::vector<OcclusionMask>& masks) {
  std::vector<torch::Tensor> items;
  items.reserve(masks.size());
  for (const auto& m : masks) items.push_back(mask_tensor(m));
  return torch::stack(items);
}

torch::Tensor expand_mask(const torch::Tensor& patch_mask, int rows, int cols, int patch_size) {
  auto m = patch_mask.to(torch::kFloat32).reshape({-1, 1, rows, cols});
  return m.repeat_interleave(patch_size, 2).repeat_interleave(patch_size, 3);
}

}  // namespace latent_ofer

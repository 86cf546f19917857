#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latent_ofer/image.hpp"

namespace latent_ofer {

struct Sample {
  std::string filename;
  int label = 0;
  Image image;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<Sample> samples;  // sorted by filename

  std::size_t size() const { return samples.size(); }
  std::vector<Image> images() const;
  std::vector<int> labels() const;
  torch::Tensor image_tensor() const;  // [N,C,H,W]
  torch::Tensor label_tensor() const;  // [N] int64
};

// Reads labels.csv (`filename,label`, header required) and every image it
// names. Missing files, labels outside 0..6 and unreadable images raise
// DataError with distinct codes and the offending line number.
Dataset ingest(const std::filesystem::path& manifest);

// Index batches for one epoch. Depends only on (n, batch_size, seed, epoch).
std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch);

}  // namespace latent_ofer

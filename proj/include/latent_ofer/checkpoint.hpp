#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace latent_ofer {

// On-disk container:
//   8 bytes   magic "LOFRCKPT"
//   u32 LE    format version
//   u64 LE    header length
//   header    JSON {"version", "meta", "tensors": [{name, shape, dtype, offset, nbytes}]}
//   payload   raw little-endian float32 tensors in header order
inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'F', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  // Throws DataError when absent.
  const torch::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters and buffers of a module, keyed by their registered names
// with `prefix` prepended.
void append_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix = "");
// Copies matching tensors into `module`; every parameter and buffer must be present.
void restore_module(const Checkpoint& checkpoint, torch::nn::Module& module, const std::string& prefix = "");

// Adam moments and step counts, keyed by parameter position in the
// optimizer's groups. Enough to resume training bit-for-bit.
void append_adam(Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix);
void restore_adam(const Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix);

}  // namespace latent_ofer

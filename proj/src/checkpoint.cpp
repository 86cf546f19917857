#include "latent_ofer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw DataError(DataError::Code::kBadFormat, "checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["meta"] = checkpoint.meta;
  header["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    header["tensors"].push_back({{"name", name},
                                 {"shape", t.sizes().vec()},
                                 {"dtype", "float32"},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    payload.push_back(std::move(t));
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Code::kUnwritable, "cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payload) {
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw DataError(DataError::Code::kUnwritable, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Code::kMissingFile, "checkpoint not found: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError(DataError::Code::kBadFormat, "not a checkpoint: " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError(DataError::Code::kBadFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError(DataError::Code::kBadFormat, "truncated checkpoint header");

  Checkpoint checkpoint;
  const auto header = nlohmann::json::parse(text);
  checkpoint.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    if (entry.at("dtype") != "float32") throw DataError(DataError::Code::kBadFormat, "unsupported dtype");
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::kFloat32);
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel()) * sizeof(float)) {
      throw DataError(DataError::Code::kBadFormat, "tensor size does not match its shape");
    }
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(nbytes));
    if (!in) throw DataError(DataError::Code::kBadFormat, "truncated checkpoint payload");
    checkpoint.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  return checkpoint;
}

void append_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters(true)) {
    checkpoint.tensors.push_back({prefix + item.key(), item.value()});
  }
  for (const auto& item : module.named_buffers(true)) {
    checkpoint.tensors.push_back({prefix + item.key(), item.value()});
  }
}

void restore_module(const Checkpoint& checkpoint, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    const auto& source = checkpoint.get(prefix + name);
    if (source.sizes() != target.sizes()) {
      throw ShapeError("checkpoint tensor '" + prefix + name + "' has the wrong shape");
    }
    target.copy_(source.to(target.dtype()));
  };
  for (auto& item : module.named_parameters(true)) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) copy_into(item.key(), item.value());
}

void append_adam(Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix) {
  auto& state = optimizer.state();
  for (std::size_t g = 0; g < optimizer.param_groups().size(); ++g) {
    const auto& params = optimizer.param_groups()[g].params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto it = state.find(params[i].unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const std::string key = prefix + std::to_string(g) + "." + std::to_string(i) + ".";
      checkpoint.tensors.push_back({key + "step", torch::tensor({static_cast<float>(s.step())})});
      checkpoint.tensors.push_back({key + "exp_avg", s.exp_avg()});
      checkpoint.tensors.push_back({key + "exp_avg_sq", s.exp_avg_sq()});
    }
  }
}

void restore_adam(const Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix) {
  auto& state = optimizer.state();
  for (std::size_t g = 0; g < optimizer.param_groups().size(); ++g) {
    const auto& params = optimizer.param_groups()[g].params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string key = prefix + std::to_string(g) + "." + std::to_string(i) + ".";
      if (!checkpoint.contains(key + "step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(static_cast<int64_t>(checkpoint.get(key + "step").item<float>()));
      s->exp_avg(checkpoint.get(key + "exp_avg").clone());
      s->exp_avg_sq(checkpoint.get(key + "exp_avg_sq").clone());
      state[params[i].unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

}  // namespace latent_ofer

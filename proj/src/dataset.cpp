#include "latent_ofer/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "latent_ofer/errors.hpp"
#include "latent_ofer/fer.hpp"
#include "latent_ofer/tensor_utils.hpp"

namespace latent_ofer {

std::vector<Image> Dataset::images() const {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

torch::Tensor Dataset::image_tensor() const { return to_batch(images()); }

torch::Tensor Dataset::label_tensor() const {
  const auto l = labels();
  return torch::tensor(std::vector<int64_t>(l.begin(), l.end()), torch::kInt64);
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

Dataset ingest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError(DataError::Code::kMissingFile, "manifest not found: " + manifest.string());
  Dataset data;
  data.root = manifest.parent_path();
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "filename,label") {
        throw DataError(DataError::Code::kBadFormat, "line 1: expected header 'filename,label'");
      }
      header = true;
      continue;
    }
    const auto where = "line " + std::to_string(line_no) + ": ";
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError(DataError::Code::kBadFormat, where + "expected filename,label");
    const auto name = trim(line.substr(0, comma));
    const auto label_text = trim(line.substr(comma + 1));
    int label = -1;
    std::size_t used = 0;
    try {
      label = std::stoi(label_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != label_text.size() || label < 0 || label >= kNumExpressions) {
      throw DataError(DataError::Code::kBadLabel, where + "label '" + label_text + "' is not in 0..6");
    }
    const auto path = data.root / name;
    if (!std::filesystem::exists(path)) {
      throw DataError(DataError::Code::kMissingFile, where + "image not found: " + path.string());
    }
    Image image;
    try {
      image = read_png(path);
    } catch (const DataError& e) {
      throw DataError(DataError::Code::kUnreadableImage, where + e.what());
    }
    data.samples.push_back({name, label, std::move(image)});
  }
  if (!header || data.samples.empty()) throw DataError(DataError::Code::kEmpty, "manifest lists no images");
  std::sort(data.samples.begin(), data.samples.end(),
            [](const Sample& a, const Sample& b) { return a.filename < b.filename; });
  for (std::size_t i = 1; i < data.samples.size(); ++i) {
    if (data.samples[i].filename == data.samples[i - 1].filename) {
      throw DataError(DataError::Code::kBadFormat, "duplicate manifest entry " + data.samples[i].filename);
    }
  }
  return data;
}

std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size <= 0) throw DomainError("batch size must be positive");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  return batches;
}

}  // namespace latent_ofer

#include "latent_ofer/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <type_traits>

#include "latent_ofer/errors.hpp"

namespace latent_ofer {

std::string_view to_string(OcclusionProtocol p) {
  switch (p) {
    case OcclusionProtocol::kSprite: return "sprite";
    case OcclusionProtocol::kRandom: return "random";
    case OcclusionProtocol::kGrad: return "grad";
  }
  return "unknown";
}

OcclusionProtocol parse_protocol(std::string_view name) {
  for (auto p : {OcclusionProtocol::kSprite, OcclusionProtocol::kRandom, OcclusionProtocol::kGrad}) {
    if (to_string(p) == name) return p;
  }
  throw DomainError("unknown occlusion protocol '" + std::string(name) + "'");
}

namespace {

std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) throw DomainError("config: '" + key + "' expects a number, got '" + text + "'");
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, std::string text) {
  if (!text.empty() && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
  std::vector<T> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    out.push_back(parse_number<T>(key, item.substr(first, item.find_last_not_of(' ') - first + 1)));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(static_cast<double>(v[i]));
  return out;
}

struct Binding {
  std::function<void(ExperimentConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Binding number(T ExperimentConfig::*field) {
  return {[field](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            c.*field = parse_number<T>("value", v);
          },
          [field](const ExperimentConfig& c) {
            if constexpr (std::is_integral_v<T>) {
              return std::to_string(c.*field);
            } else {
              return fmt(c.*field);
            }
          }};
}

template <typename Getter>
Binding int_ref(Getter ref) {
  return {[ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            ref(c) = static_cast<int>(parse_number<long long>("value", v));
          },
          [ref](const ExperimentConfig& c) {
            return std::to_string(static_cast<long long>(ref(const_cast<ExperimentConfig&>(c))));
          }};
}

template <typename Getter>
Binding real_ref(Getter ref) {
  return {[ref](ExperimentConfig& c, const std::string& v, const std::filesystem::path&) {
            ref(c) = parse_number<double>("value", v);
          },
          [ref](const ExperimentConfig& c) { return fmt(ref(const_cast<ExperimentConfig&>(c))); }};
}

Binding path(std::filesystem::path ExperimentConfig::*field) {
  return {[field](ExperimentConfig& c, const std::string& v, const std::filesystem::path& base) {
            std::filesystem::path p(v);
            c.*field = (p.is_relative() && !base.empty() && !v.empty()) ? base / p : p;
          },
          [field](const ExperimentConfig& c) { return (c.*field).string(); }};
}

const std::map<std::string, Binding>& bindings() {
  using C = ExperimentConfig;
  static const std::map<std::string, Binding> table{
      {"experiment.seed", number(&C::seed)},
      {"experiment.models_dir", path(&C::models_dir)},
      {"data.train", path(&C::train_manifest)},
      {"data.val", path(&C::val_manifest)},
      {"data.test", path(&C::test_manifest)},
      {"model.image_size", int_ref([](C& c) -> int& { return c.vit.image_size; })},
      {"model.patch_size", int_ref([](C& c) -> int& { return c.vit.patch_size; })},
      {"model.latent_dim", int_ref([](C& c) -> int& { return c.vit.dim; })},
      {"model.vit_depth", int_ref([](C& c) -> int& { return c.vit.depth; })},
      {"model.vit_heads", int_ref([](C& c) -> int& { return c.vit.heads; })},
      {"model.refiner_width", number(&C::refiner_width)},
      {"model.cnn_widths",
       {[](C& c, const std::string& v, const std::filesystem::path&) { c.cnn.widths = parse_list<int>("model.cnn_widths", v); },
        [](const C& c) { return fmt_list(c.cnn.widths); }}},
      {"loss.re", real_ref([](C& c) -> double& { return c.weights.re; })},
      {"loss.c", real_ref([](C& c) -> double& { return c.weights.c; })},
      {"loss.sc", real_ref([](C& c) -> double& { return c.weights.sc; })},
      {"loss.d", real_ref([](C& c) -> double& { return c.weights.d; })},
      {"svdd.quantile", real_ref([](C& c) -> double& { return c.svdd.quantile; })},
      {"svdd.lambda", real_ref([](C& c) -> double& { return c.svdd.weight_decay; })},
      {"svdd.hidden", int_ref([](C& c) -> int& { return c.svdd.hidden; })},
      {"svdd.out_dim", int_ref([](C& c) -> int& { return c.svdd.out_dim; })},
      {"svdd.epochs", int_ref([](C& c) -> int& { return c.svdd.epochs; })},
      {"svdd.batch_size", int_ref([](C& c) -> int& { return c.svdd.batch_size; })},
      {"svdd.learning_rate", real_ref([](C& c) -> double& { return c.svdd.learning_rate; })},
      {"svdd.latent_depth", number(&C::svdd_latent_depth)},
      {"recon.coarse_epochs", int_ref([](C& c) -> int& { return c.recon.coarse_epochs; })},
      {"recon.refine_epochs", int_ref([](C& c) -> int& { return c.recon.refine_epochs; })},
      {"recon.batch_size", int_ref([](C& c) -> int& { return c.recon.batch_size; })},
      {"recon.learning_rate", real_ref([](C& c) -> double& { return c.recon.learning_rate; })},
      {"recon.refine_learning_rate", real_ref([](C& c) -> double& { return c.recon.refine_learning_rate; })},
      {"recon.disc_learning_rate", real_ref([](C& c) -> double& { return c.recon.disc_learning_rate; })},
      {"recon.mask_min", real_ref([](C& c) -> double& { return c.recon.mask_min; })},
      {"recon.mask_max", real_ref([](C& c) -> double& { return c.recon.mask_max; })},
      {"fer.epochs", int_ref([](C& c) -> int& { return c.fer.epochs; })},
      {"fer.batch_size", int_ref([](C& c) -> int& { return c.fer.batch_size; })},
      {"fer.learning_rate", real_ref([](C& c) -> double& { return c.fer.learning_rate; })},
      {"fer.weight_decay", real_ref([](C& c) -> double& { return c.fer.weight_decay; })},
      {"fer.select_fraction", number(&C::select_fraction)},
      {"fer.mode",
       {[](C& c, const std::string& v, const std::filesystem::path&) { c.predict_mode = parse_fusion_mode(v); },
        [](const C& c) { return std::string(to_string(c.predict_mode)); }}},
      {"occlusion.protocol",
       {[](C& c, const std::string& v, const std::filesystem::path&) { c.protocol = parse_protocol(v); },
        [](const C& c) { return std::string(to_string(c.protocol)); }}},
      {"occlusion.proportion", number(&C::proportion)},
      {"eval.sweep_proportions",
       {[](C& c, const std::string& v, const std::filesystem::path&) {
          c.sweep_proportions = parse_list<double>("eval.sweep_proportions", v);
        },
        [](const C& c) { return fmt_list(c.sweep_proportions); }}},
      {"eval.noise_seeds", number(&C::noise_seeds)},
  };
  return table;
}

}  // namespace

void ExperimentConfig::sync() {
  cnn.in_channels = vit.channels;
  recon.vit = vit;
  recon.weights = weights;
  recon.refiner.image_size = vit.image_size;
  recon.refiner.patch_size = vit.patch_size;
  recon.refiner.base_width = refiner_width;
  recon.seed = seed * 31 + 11;
  svdd.seed = seed * 31 + 7;
  fer.seed = seed * 31 + 5;
}

void ExperimentConfig::validate() const {
  weights.validate();
  if (!(svdd.quantile > 0.0 && svdd.quantile <= 1.0)) throw DomainError("config: svdd.quantile must lie in (0,1]");
  if (!(svdd.weight_decay > 0.0)) throw DomainError("config: svdd.lambda must be positive");
  if (vit.patch_size <= 0 || vit.image_size % vit.patch_size != 0) {
    throw DomainError("config: image_size must be a multiple of patch_size");
  }
  if (vit.dim <= 0 || vit.heads <= 0 || vit.dim % vit.heads != 0) {
    throw DomainError("config: latent_dim must be a positive multiple of vit_heads");
  }
  if (svdd_latent_depth < -1 || svdd_latent_depth > vit.depth) throw DomainError("config: svdd.latent_depth out of range");
  if (cnn.widths.empty() || (1 << cnn.widths.size()) != vit.patch_size) {
    throw DomainError("config: the CNN must downsample by exactly the patch size");
  }
  if (!(proportion >= 0.0 && proportion <= 1.0)) throw DomainError("config: occlusion.proportion must lie in [0,1]");
  for (double p : sweep_proportions) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("config: sweep proportions must lie in [0,1]");
  }
  if (!(select_fraction > 0.0 && select_fraction <= 1.0)) throw DomainError("config: fer.select_fraction must lie in (0,1]");
  if (!(recon.mask_min > 0.0 && recon.mask_min <= recon.mask_max && recon.mask_max < 1.0)) {
    throw DomainError("config: recon mask proportions must satisfy 0 < min <= max < 1");
  }
  if (noise_seeds < 1) throw DomainError("config: eval.noise_seeds must be at least 1");
  for (const auto* p : {&train_manifest, &val_manifest, &test_manifest}) {
    if (!p->empty() && !std::filesystem::exists(*p)) {
      throw DataError(DataError::Code::kMissingFile, "config: path does not exist: " + p->string());
    }
  }
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  // The INI reader only knows ';' comments.
  std::string cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    cleaned += line + "\n";
  }
  boost::property_tree::ptree tree;
  std::istringstream in(cleaned);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw DataError(DataError::Code::kBadFormat, std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  const auto& table = bindings();
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw DataError(DataError::Code::kBadFormat, "config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : entries) {
      const auto full = section + "." + key;
      auto it = table.find(full);
      if (it == table.end()) throw DataError(DataError::Code::kBadFormat, "config: unknown key '" + full + "'");
      try {
        it->second.set(config, strip_quotes(value.data()), base_dir);
      } catch (const DomainError& e) {
        throw DomainError("config: bad value for '" + full + "': " + e.what());
      }
    }
  }
  if (const char* env = std::getenv(kSeedEnvVar); env && *env) {
    config.seed = parse_number<std::uint64_t>(kSeedEnvVar, env);
  }
  config.sync();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Code::kMissingFile, "config not found: " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& [full, binding] : bindings()) {
    const auto dot = full.find('.');
    const auto s = full.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += full.substr(dot + 1) + " = " + binding.get(config) + "\n";
  }
  return out;
}

}  // namespace latent_ofer

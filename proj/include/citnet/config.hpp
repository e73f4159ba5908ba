#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "citnet/features.hpp"
#include "citnet/model.hpp"

// Experiment configuration: every knob of the pipeline in one struct, plus
// the flat "key = value" config-file format. Unknown keys are errors, not
// warnings. Band sets are written as comma-separated name:lo:hi triples.

namespace citnet {

struct ExperimentConfig {
  // optimization
  double lr = 1e-5;
  int64_t batch_size = 32;
  double dropout = 0.2;
  double train_fraction = 0.6;
  int64_t epochs = 100;
  int64_t early_stop_patience = 20;
  double target_train_acc = 0.0;  // stop once reached; 0 disables
  double target_test_acc = 0.0;   // stop once reached; 0 disables
  uint64_t seed = 1;
  // task / model
  int64_t num_classes = 3;
  std::string variant = "full";
  int64_t grid_h = 32, grid_w = 32;
  int64_t hidden_dim = 256;
  int64_t heads = 4;
  std::string cit_mode = "double";     // double | single_token
  std::string patch_scheme = "band";   // band | spatial
  int64_t patch_size = 32;
  bool standard_shortcut = false;
  int64_t precision = 32;  // 32 | 64
  bool deterministic = true;
  bool normalize = true;
  // features
  double window_seconds = 4.0;
  std::vector<BandSpec> bands = default_bands();

  ModelVariant model_variant() const { return parse_variant(variant); }

  CitTokenMode token_mode() const {
    if (cit_mode == "double") return CitTokenMode::kDouble;
    if (cit_mode == "single_token") return CitTokenMode::kSingleToken;
    throw std::invalid_argument(
        "config: cit_mode must be 'double' or 'single_token', got '" +
        cit_mode + "'");
  }

  PatchScheme patching() const {
    if (patch_scheme == "band") return PatchScheme::kBandPerPatch;
    if (patch_scheme == "spatial") return PatchScheme::kSpatial;
    throw std::invalid_argument(
        "config: patch_scheme must be 'band' or 'spatial', got '" +
        patch_scheme + "'");
  }

  ModelConfig model_config(int64_t in_bands) const {
    ModelConfig mc;
    mc.in_bands = in_bands;
    mc.grid_h = grid_h;
    mc.grid_w = grid_w;
    mc.num_classes = num_classes;
    mc.hidden_dim = hidden_dim;
    mc.heads = heads;
    mc.dropout = dropout;
    mc.cit_mode = token_mode();
    mc.patch_scheme = patching();
    mc.patch_size = patch_size;
    mc.standard_shortcut = standard_shortcut;
    return mc;
  }

  void validate() const {
    if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
    if (batch_size < 1) {
      throw std::invalid_argument("config: batch_size must be >= 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("config: dropout must be in [0,1)");
    }
    if (train_fraction <= 0.0 || train_fraction > 1.0) {
      throw std::invalid_argument("config: train_fraction must be in (0,1]");
    }
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (num_classes < 2) {
      throw std::invalid_argument("config: num_classes must be >= 2");
    }
    if (precision != 32 && precision != 64) {
      throw std::invalid_argument("config: precision must be 32 or 64");
    }
    if (hidden_dim < 1 || heads < 1 || hidden_dim % heads != 0) {
      throw std::invalid_argument(
          "config: hidden_dim must be a positive multiple of heads");
    }
    if (grid_h < 1 || grid_w < 1 || patch_size < 1) {
      throw std::invalid_argument("config: grid/patch extents must be >= 1");
    }
    if (window_seconds <= 0.0) {
      throw std::invalid_argument("config: window_seconds must be > 0");
    }
    parse_variant(variant);
    token_mode();
    patching();
    for (size_t i = 1; i < bands.size(); ++i) {
      if (bands[i].lo_hz < bands[i - 1].hi_hz) {
        throw std::invalid_argument("config: bands overlap");
      }
    }
  }
};

namespace detail {

inline std::string format_bands(const std::vector<BandSpec>& bands) {
  std::ostringstream os;
  for (size_t i = 0; i < bands.size(); ++i) {
    if (i) os << ",";
    os << bands[i].name << ":" << bands[i].lo_hz << ":" << bands[i].hi_hz;
  }
  return os.str();
}

inline std::vector<BandSpec> parse_bands(const std::string& text) {
  std::vector<BandSpec> bands;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto c1 = item.find(':');
    const auto c2 = item.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::invalid_argument("config: band '" + item +
                                  "' is not name:lo:hi");
    }
    try {
      bands.push_back({item.substr(0, c1), std::stod(item.substr(c1 + 1, c2 - c1 - 1)),
                       std::stod(item.substr(c2 + 1))});
    } catch (const std::exception&) {
      throw std::invalid_argument("config: band '" + item + "' has bad edges");
    }
  }
  if (bands.empty()) throw std::invalid_argument("config: empty band list");
  return bands;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" +
                              v + "'");
}

}  // namespace detail

// Apply one "key = value" assignment; unknown keys are errors.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  auto as_double = [&](const char* k) {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("config: '") + k +
                                  "' expects a number, got '" + value + "'");
    }
  };
  auto as_int = [&](const char* k) {
    try {
      return static_cast<int64_t>(std::stoll(value));
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("config: '") + k +
                                  "' expects an integer, got '" + value + "'");
    }
  };
  if (key == "lr") cfg.lr = as_double("lr");
  else if (key == "batch_size") cfg.batch_size = as_int("batch_size");
  else if (key == "dropout") cfg.dropout = as_double("dropout");
  else if (key == "train_fraction") cfg.train_fraction = as_double("train_fraction");
  else if (key == "epochs") cfg.epochs = as_int("epochs");
  else if (key == "early_stop_patience") cfg.early_stop_patience = as_int("early_stop_patience");
  else if (key == "target_train_acc") cfg.target_train_acc = as_double("target_train_acc");
  else if (key == "target_test_acc") cfg.target_test_acc = as_double("target_test_acc");
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(as_int("seed"));
  else if (key == "num_classes") cfg.num_classes = as_int("num_classes");
  else if (key == "variant") cfg.variant = value;
  else if (key == "grid_h") cfg.grid_h = as_int("grid_h");
  else if (key == "grid_w") cfg.grid_w = as_int("grid_w");
  else if (key == "hidden_dim") cfg.hidden_dim = as_int("hidden_dim");
  else if (key == "heads") cfg.heads = as_int("heads");
  else if (key == "cit_mode") cfg.cit_mode = value;
  else if (key == "patch_scheme") cfg.patch_scheme = value;
  else if (key == "patch_size") cfg.patch_size = as_int("patch_size");
  else if (key == "standard_shortcut") cfg.standard_shortcut = detail::parse_bool(value, key);
  else if (key == "precision") cfg.precision = as_int("precision");
  else if (key == "deterministic") cfg.deterministic = detail::parse_bool(value, key);
  else if (key == "normalize") cfg.normalize = detail::parse_bool(value, key);
  else if (key == "window_seconds") cfg.window_seconds = as_double("window_seconds");
  else if (key == "bands") cfg.bands = detail::parse_bands(value);
  else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

inline ExperimentConfig parse_config(std::istream& is,
                                     const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    std::string key, value;
    if (eq != std::string::npos) {
      key = line.substr(0, eq);
      value = line.substr(eq + 1);
    } else {
      key = line;
    }
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    if (key.empty() && value.empty()) continue;
    if (key.empty() || eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    try {
      apply_config_entry(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": " +
                                  e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("config: cannot open '" + path.string() + "'");
  }
  return parse_config(is, path.string());
}

// Full snapshot in config-file syntax (parseable back).
inline std::string config_to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "lr = " << cfg.lr << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "dropout = " << cfg.dropout << "\n";
  os << "train_fraction = " << cfg.train_fraction << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "early_stop_patience = " << cfg.early_stop_patience << "\n";
  os << "target_train_acc = " << cfg.target_train_acc << "\n";
  os << "target_test_acc = " << cfg.target_test_acc << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "num_classes = " << cfg.num_classes << "\n";
  os << "variant = " << cfg.variant << "\n";
  os << "grid_h = " << cfg.grid_h << "\n";
  os << "grid_w = " << cfg.grid_w << "\n";
  os << "hidden_dim = " << cfg.hidden_dim << "\n";
  os << "heads = " << cfg.heads << "\n";
  os << "cit_mode = " << cfg.cit_mode << "\n";
  os << "patch_scheme = " << cfg.patch_scheme << "\n";
  os << "patch_size = " << cfg.patch_size << "\n";
  os << "standard_shortcut = " << (cfg.standard_shortcut ? "true" : "false") << "\n";
  os << "precision = " << cfg.precision << "\n";
  os << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
  os << "normalize = " << (cfg.normalize ? "true" : "false") << "\n";
  os << "window_seconds = " << cfg.window_seconds << "\n";
  os << "bands = " << detail::format_bands(cfg.bands) << "\n";
  return os.str();
}

}  // namespace citnet

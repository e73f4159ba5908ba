#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "citnet/common.hpp"
#include "citnet/eeg.hpp"
#include "citnet/features.hpp"

// Synthetic EEG stand-in for the licensed datasets. Each class is a
// band-power profile over electrode groups; a recording is the sum of one
// sinusoid per band (frequency at the band center, amplitude from the
// profile, phase drawn per channel/band from the seed) plus white noise.
// Same seed, same recording, bit for bit.
//
// Spec file format: '#' comments, optional "noise <level>" and
// "baseline <amp>" lines, then blocks of
//   class <name>
//     <band> <electrode-prefix-list|*> <amplitude>
// Prefixes are comma-separated and match electrode names by prefix.

namespace citnet {

struct BandGroupAmp {
  std::string band;
  std::string prefix;  // "*" matches every electrode
  double amplitude = 0.0;
};

struct ClassProfile {
  std::string name;
  std::vector<BandGroupAmp> entries;
};

struct SynthSpec {
  double baseline_amp = 0.2;
  double noise_level = 0.25;
  std::vector<ClassProfile> classes;
};

// Band-power-separable benchmark profiles: class k gets a dominant band
// over a characteristic scalp region.
inline SynthSpec default_synth_spec(int num_classes) {
  if (num_classes < 2 || num_classes > 5) {
    throw std::invalid_argument(
        "default_synth_spec: supports 2..5 classes, got " +
        std::to_string(num_classes));
  }
  SynthSpec spec;
  const std::vector<ClassProfile> pool = {
      {"alpha_posterior", {{"alpha", "P,PO,O,CB", 2.0}}},
      {"beta_frontal", {{"beta", "FP,AF,F", 2.0}}},
      {"theta_global", {{"theta", "*", 1.6}}},
      {"gamma_central", {{"gamma", "C,T", 2.2}}},
      {"delta_global", {{"delta", "*", 1.8}}},
  };
  spec.classes.assign(pool.begin(), pool.begin() + num_classes);
  return spec;
}

inline SynthSpec parse_synth_spec(std::istream& is,
                                  const std::string& source = "<spec>") {
  SynthSpec spec;
  spec.classes.clear();
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::stringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first == "noise") {
      if (!(ss >> spec.noise_level) || spec.noise_level < 0.0) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": bad noise level");
      }
    } else if (first == "baseline") {
      if (!(ss >> spec.baseline_amp) || spec.baseline_amp < 0.0) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": bad baseline amplitude");
      }
    } else if (first == "class") {
      std::string name;
      if (!(ss >> name)) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": class needs a name");
      }
      spec.classes.push_back({name, {}});
    } else {
      if (spec.classes.empty()) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": band entry before any 'class' line");
      }
      BandGroupAmp entry;
      entry.band = first;
      if (!(ss >> entry.prefix >> entry.amplitude) || entry.amplitude < 0.0) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": expected '<band> <prefixes> <amplitude>'");
      }
      spec.classes.back().entries.push_back(std::move(entry));
    }
  }
  return spec;
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("synth spec: cannot open '" + path.string() + "'");
  }
  return parse_synth_spec(is, path.string());
}

namespace detail {

inline bool prefix_list_matches(const std::string& prefixes,
                                const std::string& name) {
  if (prefixes == "*") return true;
  std::stringstream ss(prefixes);
  std::string p;
  while (std::getline(ss, p, ',')) {
    if (!p.empty() && name.rfind(p, 0) == 0) return true;
  }
  return false;
}

}  // namespace detail

// Amplitude of (electrode, band) under a profile: baseline plus every
// matching entry.
inline double synth_amplitude(const SynthSpec& spec, const ClassProfile& cls,
                              const std::string& electrode,
                              const std::string& band) {
  double amp = spec.baseline_amp;
  for (const auto& e : cls.entries) {
    if (e.band == band && detail::prefix_list_matches(e.prefix, electrode)) {
      amp += e.amplitude;
    }
  }
  return amp;
}

inline EegRecording synth_eeg(const SynthSpec& spec, int class_idx,
                              const std::vector<std::string>& channels,
                              const std::vector<BandSpec>& bands,
                              uint64_t seed, double duration_s,
                              double sample_rate) {
  if (spec.classes.empty()) {
    throw std::invalid_argument("synth_eeg: profile has no classes");
  }
  if (class_idx < 0 || class_idx >= static_cast<int>(spec.classes.size())) {
    throw std::invalid_argument("synth_eeg: class index out of range");
  }
  if (channels.empty()) {
    throw std::invalid_argument("synth_eeg: no channels");
  }
  const ClassProfile& cls = spec.classes[static_cast<size_t>(class_idx)];
  const int64_t n_samples =
      static_cast<int64_t>(std::llround(duration_s * sample_rate));
  EegRecording rec;
  rec.id = "synth_" + cls.name + "_" + std::to_string(seed);
  rec.channel_names = channels;
  rec.sample_rate = sample_rate;
  rec.label = class_idx;
  rec.samples.assign(
      static_cast<size_t>(n_samples) * channels.size(), 0.0f);

  Rng rng(seed);
  // Phases first (fixed draw order), then per-sample noise.
  std::vector<double> phases(channels.size() * bands.size());
  for (double& p : phases) p = rng.uniform() * 2.0 * M_PI;

  for (size_t c = 0; c < channels.size(); ++c) {
    float* dst = rec.samples.data() + c * static_cast<size_t>(n_samples);
    for (size_t b = 0; b < bands.size(); ++b) {
      const double amp =
          synth_amplitude(spec, cls, channels[c], bands[b].name);
      if (amp == 0.0) continue;
      const double freq = 0.5 * (bands[b].lo_hz + bands[b].hi_hz);
      const double phase = phases[c * bands.size() + b];
      const double w = 2.0 * M_PI * freq / sample_rate;
      for (int64_t t = 0; t < n_samples; ++t) {
        dst[t] += static_cast<float>(amp * std::sin(w * static_cast<double>(t) + phase));
      }
    }
  }
  if (spec.noise_level > 0.0) {
    for (auto& v : rec.samples) {
      v += static_cast<float>(spec.noise_level * rng.normal());
    }
  }
  return rec;
}

}  // namespace citnet

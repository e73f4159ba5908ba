#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "citnet/eeg.hpp"
#include "citnet/layout.hpp"
#include "citnet/psd.hpp"

// Spatial-frequency representation: per-segment Welch band powers per
// channel, placed on the electrode grid and stacked in canonical band
// order (delta, theta, alpha, beta, gamma by default). Grids are stored
// one file per segment ("SFG1" binary) plus an index CSV
// "file,label,recording_id,segment_index".

namespace citnet {

struct BandSpec {
  std::string name;
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

// Band edges follow the convention of the 62-channel emotion datasets.
inline std::vector<BandSpec> default_bands() {
  return {{"delta", 1.0, 4.0},
          {"theta", 4.0, 8.0},
          {"alpha", 8.0, 14.0},
          {"beta", 14.0, 31.0},
          {"gamma", 31.0, 50.0}};
}

inline void validate_bands(const std::vector<BandSpec>& bands,
                           double nyquist_hz) {
  if (bands.empty()) throw std::invalid_argument("bands: empty band set");
  for (size_t i = 0; i < bands.size(); ++i) {
    const auto& b = bands[i];
    if (!(b.lo_hz > 0.0) || !(b.lo_hz < b.hi_hz)) {
      throw std::invalid_argument("bands: '" + b.name +
                                  "' needs 0 < lo < hi");
    }
    if (b.hi_hz > nyquist_hz) {
      throw std::invalid_argument("bands: '" + b.name + "' upper edge " +
                                  std::to_string(b.hi_hz) +
                                  " Hz above Nyquist " +
                                  std::to_string(nyquist_hz) + " Hz");
    }
    if (i > 0 && bands[i].lo_hz < bands[i - 1].hi_hz) {
      throw std::invalid_argument("bands: '" + b.name + "' overlaps '" +
                                  bands[i - 1].name + "'");
    }
  }
}

struct BandPowerMatrix {
  int64_t n_channels = 0;
  int64_t n_bands = 0;
  std::vector<double> values;  // [n_channels][n_bands]

  double at(int64_t channel, int64_t band) const {
    return values[static_cast<size_t>(channel * n_bands + band)];
  }
};

// Entry (e,b) = mean Welch PSD of channel e over the bins of band b.
inline BandPowerMatrix band_psd(const EegSegment& seg,
                                const std::vector<BandSpec>& bands,
                                const WelchParams& welch = {}) {
  const EegRecording& rec = *seg.recording;
  validate_bands(bands, rec.sample_rate / 2.0);
  BandPowerMatrix out;
  out.n_channels = rec.n_channels();
  out.n_bands = static_cast<int64_t>(bands.size());
  out.values.resize(static_cast<size_t>(out.n_channels * out.n_bands));
  for (int64_t c = 0; c < out.n_channels; ++c) {
    const PsdEstimate est = welch_psd(seg.channel(c), rec.sample_rate, welch);
    for (int64_t b = 0; b < out.n_bands; ++b) {
      out.values[static_cast<size_t>(c * out.n_bands + b)] = band_mean_power(
          est, bands[static_cast<size_t>(b)].lo_hz,
          bands[static_cast<size_t>(b)].hi_hz);
    }
  }
  return out;
}

struct SpatialFrequencyGrid {
  int64_t n_bands = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> data;  // [band][row][col]
  int32_t label = -1;

  float at(int64_t band, int64_t row, int64_t col) const {
    return data[static_cast<size_t>((band * height + row) * width + col)];
  }
  float& at(int64_t band, int64_t row, int64_t col) {
    return data[static_cast<size_t>((band * height + row) * width + col)];
  }
};

// grid[b][row_e][col_e] = features[e][b]; cells without an electrode stay
// exactly zero. Band order is the band-list order.
inline SpatialFrequencyGrid spatial_map(const BandPowerMatrix& features,
                                        const std::vector<std::string>& names,
                                        const ElectrodeLayout& layout,
                                        int32_t label = -1) {
  if (static_cast<int64_t>(names.size()) != features.n_channels) {
    throw std::invalid_argument("spatial_map: got " +
                                std::to_string(names.size()) + " names for " +
                                std::to_string(features.n_channels) +
                                " feature rows");
  }
  SpatialFrequencyGrid grid;
  grid.n_bands = features.n_bands;
  grid.height = layout.height;
  grid.width = layout.width;
  grid.label = label;
  grid.data.assign(
      static_cast<size_t>(grid.n_bands * grid.height * grid.width), 0.0f);
  for (int64_t e = 0; e < features.n_channels; ++e) {
    const auto& name = names[static_cast<size_t>(e)];
    if (!layout.contains(name)) {
      throw std::runtime_error("spatial_map: electrode '" + name +
                               "' has no layout cell");
    }
    const auto [row, col] = layout.at(name);
    for (int64_t b = 0; b < features.n_bands; ++b) {
      grid.at(b, row, col) = static_cast<float>(features.at(e, b));
    }
  }
  return grid;
}

struct FeatureConfig {
  double window_seconds = 4.0;
  std::vector<BandSpec> bands = default_bands();
  WelchParams welch;
};

// One grid per segment, order preserving; deterministic for fixed inputs.
inline std::vector<SpatialFrequencyGrid> build_representation(
    const EegRecording& rec, const ElectrodeLayout& layout,
    const FeatureConfig& cfg = {}) {
  rec.validate();
  std::vector<SpatialFrequencyGrid> grids;
  const auto segments = segment(rec, cfg.window_seconds);
  for (size_t i = 0; i < segments.size(); ++i) {
    try {
      grids.push_back(spatial_map(band_psd(segments[i], cfg.bands, cfg.welch),
                                  rec.channel_names, layout,
                                  segments[i].label));
    } catch (const std::exception& e) {
      throw std::runtime_error("build_representation: segment " +
                               std::to_string(i) + " of '" + rec.id +
                               "': " + e.what());
    }
  }
  return grids;
}

// ---------------------------------------------------------------------------
// Grid files and dataset directories.
// ---------------------------------------------------------------------------

inline void write_grid(const SpatialFrequencyGrid& grid,
                       const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("grid: cannot open '" + path.string() +
                             "' for writing");
  }
  os.write("SFG1", 4);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(grid.n_bands));
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(grid.height));
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(grid.width));
  detail::write_le<int32_t>(os, grid.label);
  for (float v : grid.data) detail::write_le<float>(os, v);
  if (!os) throw std::runtime_error("grid: write failed");
}

inline SpatialFrequencyGrid read_grid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("grid: cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SFG1", 4) != 0) {
    throw std::runtime_error("grid: bad magic in '" + path.string() + "'");
  }
  SpatialFrequencyGrid grid;
  grid.n_bands = detail::read_le<uint32_t>(is, "bands");
  grid.height = detail::read_le<uint32_t>(is, "height");
  grid.width = detail::read_le<uint32_t>(is, "width");
  grid.label = detail::read_le<int32_t>(is, "label");
  grid.data.resize(
      static_cast<size_t>(grid.n_bands * grid.height * grid.width));
  for (auto& v : grid.data) v = detail::read_le<float>(is, "grid data");
  return grid;
}

struct GridIndexEntry {
  std::string file;
  int32_t label = -1;
  std::string recording_id;
  int64_t segment_index = 0;
};

inline void write_dataset(const std::vector<SpatialFrequencyGrid>& grids,
                          const std::vector<GridIndexEntry>& index,
                          const std::filesystem::path& dir) {
  if (grids.size() != index.size()) {
    throw std::invalid_argument("dataset: grids/index size mismatch");
  }
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "index.csv");
  if (!os) throw std::runtime_error("dataset: cannot write index.csv");
  os << "file,label,recording_id,segment_index\n";
  for (size_t i = 0; i < grids.size(); ++i) {
    write_grid(grids[i], dir / index[i].file);
    os << index[i].file << "," << index[i].label << ","
       << index[i].recording_id << "," << index[i].segment_index << "\n";
  }
}

inline std::vector<SpatialFrequencyGrid> read_dataset(
    const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.csv");
  if (!is) {
    throw std::runtime_error("dataset: cannot open '" +
                             (dir / "index.csv").string() + "'");
  }
  std::vector<SpatialFrequencyGrid> grids;
  std::string line;
  size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (row == 1 || line.empty()) continue;  // header
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("dataset: index.csv row " + std::to_string(row) +
                               " malformed");
    }
    grids.push_back(read_grid(dir / line.substr(0, comma)));
  }
  return grids;
}

// ---------------------------------------------------------------------------
// Per-band normalization: log(1+x) then z-score, statistics from the
// training split only.
// ---------------------------------------------------------------------------

struct BandNormStats {
  std::vector<float> mean;   // per band
  std::vector<float> stdev;  // per band, floored at 1e-6
};

inline BandNormStats compute_band_norm(
    const std::vector<SpatialFrequencyGrid>& grids,
    const std::vector<int64_t>& indices) {
  if (grids.empty() || indices.empty()) {
    throw std::invalid_argument("band norm: no grids");
  }
  const int64_t n_bands = grids[0].n_bands;
  BandNormStats stats;
  stats.mean.assign(static_cast<size_t>(n_bands), 0.0f);
  stats.stdev.assign(static_cast<size_t>(n_bands), 0.0f);
  std::vector<double> sum(static_cast<size_t>(n_bands), 0.0);
  std::vector<double> sq(static_cast<size_t>(n_bands), 0.0);
  int64_t per_band = 0;
  for (int64_t idx : indices) {
    const auto& g = grids[static_cast<size_t>(idx)];
    const int64_t hw = g.height * g.width;
    per_band += hw;
    for (int64_t b = 0; b < n_bands; ++b) {
      for (int64_t i = 0; i < hw; ++i) {
        const double v =
            std::log1p(static_cast<double>(g.data[static_cast<size_t>(b * hw + i)]));
        sum[static_cast<size_t>(b)] += v;
        sq[static_cast<size_t>(b)] += v * v;
      }
    }
  }
  for (int64_t b = 0; b < n_bands; ++b) {
    const double mean = sum[static_cast<size_t>(b)] / static_cast<double>(per_band);
    const double var =
        sq[static_cast<size_t>(b)] / static_cast<double>(per_band) - mean * mean;
    stats.mean[static_cast<size_t>(b)] = static_cast<float>(mean);
    stats.stdev[static_cast<size_t>(b)] =
        static_cast<float>(std::max(std::sqrt(std::max(var, 0.0)), 1e-6));
  }
  return stats;
}

}  // namespace citnet

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "citnet/params.hpp"  // little-endian IO helpers

// Raw multichannel EEG storage, fixed-window segmentation, and the on-disk
// formats:
//   EEGB v1 binary: magic "EEGB", u16 version=1, u32 n_channels,
//     f32 sample_rate, u64 n_samples, n_channels x (u32 length + UTF-8
//     name), then channel-major f32 little-endian samples.
//   CSV alternative: header row of channel names, one row per sample
//     (the rate is supplied by the caller; CSV carries none).
//   Label file: CSV "recording_id,label".

namespace citnet {

struct EegRecording {
  std::string id;  // recording identifier (file stem for file-backed data)
  std::vector<std::string> channel_names;
  double sample_rate = 0.0;
  std::vector<float> samples;  // [n_channels][n_samples] row-major
  int32_t label = -1;

  int64_t n_channels() const {
    return static_cast<int64_t>(channel_names.size());
  }
  int64_t n_samples() const {
    return channel_names.empty()
               ? 0
               : static_cast<int64_t>(samples.size()) / n_channels();
  }
  std::span<const float> channel(int64_t c) const {
    const int64_t ns = n_samples();
    return std::span<const float>(samples).subspan(
        static_cast<size_t>(c * ns), static_cast<size_t>(ns));
  }

  void validate() const {
    if (sample_rate <= 0.0 || !std::isfinite(sample_rate)) {
      throw std::invalid_argument("EegRecording: sample rate must be positive");
    }
    if (channel_names.empty()) {
      throw std::invalid_argument("EegRecording: no channels");
    }
    if (samples.size() % channel_names.size() != 0) {
      throw std::invalid_argument(
          "EegRecording: sample count not divisible by channel count");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : channel_names) {
      if (!seen.insert(name).second) {
        throw std::invalid_argument("EegRecording: duplicate channel '" + name +
                                    "'");
      }
    }
  }
};

struct EegSegment {
  const EegRecording* recording = nullptr;
  int64_t start_sample = 0;
  int64_t length_samples = 0;
  int32_t label = -1;

  std::span<const float> channel(int64_t c) const {
    return recording->channel(c).subspan(static_cast<size_t>(start_sample),
                                         static_cast<size_t>(length_samples));
  }
};

// Back-to-back non-overlapping windows from sample 0; the trailing
// remainder is dropped. Each segment carries the recording's label. An
// empty recording yields an empty list.
inline std::vector<EegSegment> segment(const EegRecording& rec,
                                       double window_seconds) {
  if (window_seconds <= 0.0) {
    throw std::invalid_argument("segment: window must be positive");
  }
  const int64_t window =
      static_cast<int64_t>(std::llround(window_seconds * rec.sample_rate));
  if (window < 1) {
    throw std::invalid_argument("segment: window shorter than one sample");
  }
  std::vector<EegSegment> out;
  const int64_t count = rec.n_samples() / window;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back({&rec, i * window, window, rec.label});
  }
  return out;
}

inline void write_eegb(const EegRecording& rec,
                       const std::filesystem::path& path) {
  rec.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("eegb: cannot open '" + path.string() +
                             "' for writing");
  }
  os.write("EEGB", 4);
  detail::write_le<uint16_t>(os, 1);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(rec.n_channels()));
  detail::write_le<float>(os, static_cast<float>(rec.sample_rate));
  detail::write_le<uint64_t>(os, static_cast<uint64_t>(rec.n_samples()));
  for (const auto& name : rec.channel_names) detail::write_name(os, name);
  for (float v : rec.samples) detail::write_le<float>(os, v);
  if (!os) throw std::runtime_error("eegb: write failed");
}

inline EegRecording read_eegb(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("eegb: cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EEGB", 4) != 0) {
    throw std::runtime_error("eegb: bad magic in '" + path.string() +
                             "' (offset 0)");
  }
  const uint16_t version = detail::read_le<uint16_t>(is, "version");
  if (version != 1) {
    throw std::runtime_error("eegb: unsupported version " +
                             std::to_string(version));
  }
  EegRecording rec;
  rec.id = path.stem().string();
  const uint32_t n_channels = detail::read_le<uint32_t>(is, "channel count");
  rec.sample_rate = detail::read_le<float>(is, "sample rate");
  const uint64_t n_samples = detail::read_le<uint64_t>(is, "sample count");
  for (uint32_t c = 0; c < n_channels; ++c) {
    rec.channel_names.push_back(detail::read_name(is));
  }
  rec.samples.resize(static_cast<size_t>(n_channels) *
                     static_cast<size_t>(n_samples));
  for (auto& v : rec.samples) v = detail::read_le<float>(is, "samples");
  rec.validate();
  return rec;
}

// CSV: header row of channel names, one row per sample.
inline EegRecording read_eeg_csv(const std::filesystem::path& path,
                                 double sample_rate) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open '" + path.string() + "'");
  EegRecording rec;
  rec.id = path.stem().string();
  rec.sample_rate = sample_rate;
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("csv: '" + path.string() + "' has no header row");
  }
  std::stringstream header(line);
  std::string cell;
  while (std::getline(header, cell, ',')) rec.channel_names.push_back(cell);
  const size_t n_channels = rec.channel_names.size();

  std::vector<std::vector<float>> columns(n_channels);
  size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= n_channels) break;
      try {
        columns[col].push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("csv: '" + path.string() + "' row " +
                                 std::to_string(row) + ": bad number '" + cell +
                                 "'");
      }
      ++col;
    }
    if (col != n_channels) {
      throw std::runtime_error("csv: '" + path.string() + "' row " +
                               std::to_string(row) + " has " +
                               std::to_string(col) + " values, expected " +
                               std::to_string(n_channels));
    }
  }
  const size_t n_samples = columns.empty() ? 0 : columns[0].size();
  rec.samples.resize(n_channels * n_samples);
  for (size_t c = 0; c < n_channels; ++c) {
    std::copy(columns[c].begin(), columns[c].end(),
              rec.samples.begin() + static_cast<std::ptrdiff_t>(c * n_samples));
  }
  rec.validate();
  return rec;
}

inline std::map<std::string, int32_t> read_labels_csv(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("labels: cannot open '" + path.string() + "'");
  }
  std::map<std::string, int32_t> labels;
  std::string line;
  size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    if (row == 1 && line.rfind("recording_id", 0) == 0) continue;  // header
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("labels: '" + path.string() + "' row " +
                               std::to_string(row) + ": expected 'id,label'");
    }
    try {
      labels[line.substr(0, comma)] =
          static_cast<int32_t>(std::stol(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error("labels: '" + path.string() + "' row " +
                               std::to_string(row) + ": bad label");
    }
  }
  return labels;
}

inline void write_labels_csv(const std::map<std::string, int32_t>& labels,
                             const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("labels: cannot open '" + path.string() +
                             "' for writing");
  }
  os << "recording_id,label\n";
  for (const auto& [id, label] : labels) os << id << "," << label << "\n";
}

}  // namespace citnet

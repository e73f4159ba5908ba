#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "citnet/common.hpp"

// Run manifest: a structured-text record of what a command did — config
// snapshot, seed, relative artifact paths, content digests, tool version,
// wall-clock timings. Written atomically (temp file + rename) at run end.

namespace citnet {

// FNV-1a 64-bit over a file's bytes.
inline uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("digest: cannot open '" + path.string() + "'");
  }
  uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!is) break;
  }
  return h;
}

class RunManifest {
 public:
  explicit RunManifest(std::string command)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void set(const std::string& key, const std::string& value) {
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, uint64_t value) {
    set(key, std::to_string(value));
  }
  void set(const std::string& key, double value) {
    std::ostringstream os;
    os << value;
    set(key, os.str());
  }

  // Records the path (relative to the run directory) and its digest.
  void add_artifact(const std::string& name, const std::filesystem::path& dir,
                    const std::string& relative) {
    set("artifact." + name, relative);
    std::ostringstream os;
    os << std::hex << file_digest(dir / relative);
    set("digest." + relative, "fnv1a:" + os.str());
  }

  void write(const std::filesystem::path& dir,
             const std::string& filename = "manifest.txt") const {
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start_)
                             .count();
    std::ostringstream os;
    os << "citnet-run-manifest v1\n";
    os << "tool_version = " << version() << "\n";
    os << "command = " << command_ << "\n";
    os << "wall_ms = " << wall_ms << "\n";
    for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";

    const auto tmp = dir / (filename + ".tmp");
    {
      std::ofstream f(tmp);
      if (!f) {
        throw std::runtime_error("manifest: cannot write '" + tmp.string() +
                                 "'");
      }
      f << os.str();
    }
    std::filesystem::rename(tmp, dir / filename);
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace citnet

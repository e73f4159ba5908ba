#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "citnet/tensor.hpp"

// Named, shaped parameter store plus the CKPT v1 checkpoint format:
//   magic "CKPT", u16 version, u32 entry count, then per entry
//   u32 name length + name bytes, u8 rank, u32 extents, f32 LE data,
//   and a trailing u64 holding the total file byte length (truncation
//   detection). Multi-byte fields are little-endian; tensor payloads are
//   always f32 regardless of the in-memory scalar type.

namespace citnet {

template <typename T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> tensor,
                 bool trainable = true) {
    if (index_.count(name)) {
      throw std::invalid_argument("ModelParams: duplicate name '" + name + "'");
    }
    tensor.set_requires_grad(trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(tensor), trainable});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("ModelParams: no parameter '" + name + "'");
    }
    return entries_[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::out_of_range("ModelParams: no parameter '" + name + "'");
    }
    return entries_[it->second].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) {
      if (e.trainable) e.tensor.zero_grad();
    }
  }

  // Deep copy; fresh leaf tensors, no shared storage.
  ModelParams clone() const {
    ModelParams out;
    for (const auto& e : entries_) {
      out.add(e.name, e.tensor.clone_detached(), e.trainable);
    }
    return out;
  }

  // Overwrite values from another store with the exact same names/shapes.
  void copy_values_from(const ModelParams& other) {
    if (other.size() != size()) {
      throw std::invalid_argument("ModelParams: entry count mismatch");
    }
    for (size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries_[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
        throw std::invalid_argument("ModelParams: mismatch at '" + dst.name +
                                    "'");
      }
      std::copy_n(src.tensor.data().data(), src.tensor.numel(),
                  dst.tensor.mutable_data().data());
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

namespace detail {

template <typename V>
void write_le(std::ostream& os, V value) {
  unsigned char buf[sizeof(V)];
  std::memcpy(buf, &value, sizeof(V));
  os.write(reinterpret_cast<const char*>(buf), sizeof(V));
}

template <typename V>
V read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(V)];
  is.read(reinterpret_cast<char*>(buf), sizeof(V));
  if (!is) {
    throw std::runtime_error(std::string("checkpoint: truncated reading ") +
                             what);
  }
  V value;
  std::memcpy(&value, buf, sizeof(V));
  return value;
}

inline void write_name(std::ostream& os, const std::string& name) {
  write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

inline std::string read_name(std::istream& is) {
  const uint32_t len = read_le<uint32_t>(is, "name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated reading name");
  return name;
}

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

template <typename T>
void save_checkpoint(const ModelParams<T>& params,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("checkpoint: cannot open '" + path.string() +
                             "' for writing");
  }
  os.write("CKPT", 4);
  detail::write_le<uint16_t>(os, 1);
  detail::write_le<uint32_t>(os, static_cast<uint32_t>(params.size()));
  uint64_t bytes = 4 + 2 + 4;
  for (const auto& e : params.entries()) {
    detail::write_name(os, e.name);
    const Shape& s = e.tensor.shape();
    detail::write_le<uint8_t>(os, static_cast<uint8_t>(s.size()));
    for (int64_t d : s) detail::write_le<uint32_t>(os, static_cast<uint32_t>(d));
    for (T v : e.tensor.data()) {
      detail::write_le<float>(os, static_cast<float>(v));
    }
    bytes += 4 + e.name.size() + 1 + 4 * s.size() + 4 * e.tensor.numel();
  }
  bytes += 8;  // the footer itself
  detail::write_le<uint64_t>(os, bytes);
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline std::vector<CheckpointEntry> read_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  }
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CKPT", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path.string() + "'");
  }
  const uint16_t version = detail::read_le<uint16_t>(is, "version");
  if (version != 1) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const uint32_t count = detail::read_le<uint32_t>(is, "entry count");
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = detail::read_name(is);
    const uint8_t rank = detail::read_le<uint8_t>(is, "rank");
    int64_t numel = 1;
    for (uint8_t r = 0; r < rank; ++r) {
      const uint32_t extent = detail::read_le<uint32_t>(is, "extent");
      e.shape.push_back(extent);
      numel *= extent;
    }
    e.data.resize(static_cast<size_t>(numel));
    for (int64_t j = 0; j < numel; ++j) {
      e.data[static_cast<size_t>(j)] = detail::read_le<float>(is, "data");
    }
    entries.push_back(std::move(e));
  }
  const uint64_t footer = detail::read_le<uint64_t>(is, "footer");
  const uint64_t actual = static_cast<uint64_t>(
      std::filesystem::file_size(path));
  if (footer != actual) {
    throw std::runtime_error("checkpoint: footer length " +
                             std::to_string(footer) + " != file size " +
                             std::to_string(actual) + " (truncated?)");
  }
  return entries;
}

// Load values into an existing parameter store; the checkpoint must carry
// exactly the model's names with matching shapes.
template <typename T>
void load_checkpoint(ModelParams<T>& params,
                     const std::filesystem::path& path) {
  auto entries = read_checkpoint(path);
  if (entries.size() != params.size()) {
    throw std::runtime_error("checkpoint: has " +
                             std::to_string(entries.size()) + " entries, model has " +
                             std::to_string(params.size()));
  }
  for (const auto& e : entries) {
    if (!params.contains(e.name)) {
      throw std::runtime_error("checkpoint: unexpected entry '" + e.name + "'");
    }
    Tensor<T>& t = params.at(e.name);
    if (t.shape() != e.shape) {
      throw std::runtime_error("checkpoint: shape mismatch at '" + e.name +
                               "': " + shape_str(e.shape) + " vs " +
                               shape_str(t.shape()));
    }
    T* dst = t.mutable_data().data();
    for (size_t i = 0; i < e.data.size(); ++i) dst[i] = static_cast<T>(e.data[i]);
  }
}

}  // namespace citnet

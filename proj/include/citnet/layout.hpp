#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

// Electrode-to-grid placement. Layout files are plain text: '#' comments,
// first non-comment line "grid H W", then one "NAME row col" line per
// electrode. Two electrodes on one cell or a cell out of bounds is a load
// error. The built-in default places the 62-channel 10-20 montage on a
// 32x32 grid, row positions scaled from the standard cap geometry.

namespace citnet {

struct ElectrodeLayout {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<std::string> order;  // file order, for reporting
  std::unordered_map<std::string, std::pair<int64_t, int64_t>> cells;

  bool contains(const std::string& name) const { return cells.count(name) > 0; }
  std::pair<int64_t, int64_t> at(const std::string& name) const {
    auto it = cells.find(name);
    if (it == cells.end()) {
      throw std::out_of_range("layout: no electrode '" + name + "'");
    }
    return it->second;
  }
};

inline ElectrodeLayout parse_layout(std::istream& is,
                                    const std::string& source = "<layout>") {
  ElectrodeLayout layout;
  std::unordered_map<int64_t, std::string> occupied;
  std::string line;
  size_t line_no = 0;
  bool have_grid = false;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::stringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (!have_grid) {
      if (first != "grid") {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": expected 'grid H W' first");
      }
      if (!(ss >> layout.height >> layout.width) || layout.height <= 0 ||
          layout.width <= 0) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) +
                                 ": bad grid extents");
      }
      have_grid = true;
      continue;
    }
    int64_t row = 0, col = 0;
    if (!(ss >> row >> col)) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) +
                               ": expected 'NAME row col'");
    }
    if (row < 0 || row >= layout.height || col < 0 || col >= layout.width) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": '" +
                               first + "' cell (" + std::to_string(row) + "," +
                               std::to_string(col) + ") outside " +
                               std::to_string(layout.height) + "x" +
                               std::to_string(layout.width) + " grid");
    }
    if (layout.cells.count(first)) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) +
                               ": duplicate electrode '" + first + "'");
    }
    const int64_t key = row * layout.width + col;
    auto [it, fresh] = occupied.emplace(key, first);
    if (!fresh) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": '" +
                               first + "' collides with '" + it->second +
                               "' at cell (" + std::to_string(row) + "," +
                               std::to_string(col) + ")");
    }
    layout.cells[first] = {row, col};
    layout.order.push_back(first);
  }
  if (!have_grid) {
    throw std::runtime_error(source + ": missing 'grid H W' line");
  }
  return layout;
}

inline ElectrodeLayout load_layout(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("layout: cannot open '" + path.string() + "'");
  }
  return parse_layout(is, path.string());
}

// 62-channel montage on a 32x32 grid.
inline const std::string& default_layout_text() {
  static const std::string text = R"(# 62-electrode layout on a 32x32 grid
# Rows follow the 10-20 cap from frontal pole to occipital, positions
# scaled to the grid; unoccupied cells stay zero in the feature maps.
grid 32 32
FP1 2 12
FPZ 2 16
FP2 2 19
AF3 5 13
AF4 5 18
F7 9 2
F5 9 5
F3 9 9
F1 9 12
FZ 9 16
F2 9 19
F4 9 22
F6 9 26
F8 9 29
FT7 12 2
FC5 12 5
FC3 12 9
FC1 12 12
FCZ 12 16
FC2 12 19
FC4 12 22
FC6 12 26
FT8 12 29
T7 16 2
C5 16 5
C3 16 9
C1 16 12
CZ 16 16
C2 16 19
C4 16 22
C6 16 26
T8 16 29
TP7 19 2
CP5 19 5
CP3 19 9
CP1 19 12
CPZ 19 16
CP2 19 19
CP4 19 22
CP6 19 26
TP8 19 29
P7 23 2
P5 23 5
P3 23 9
P1 23 12
PZ 23 16
P2 23 19
P4 23 22
P6 23 26
P8 23 29
PO7 26 4
PO5 26 8
PO3 26 12
POZ 26 16
PO4 26 19
PO6 26 23
PO8 26 27
CB1 29 8
O1 29 12
OZ 29 16
O2 29 19
CB2 29 23
)";
  return text;
}

inline ElectrodeLayout default_layout() {
  std::stringstream ss(default_layout_text());
  return parse_layout(ss, "<default-layout>");
}

}  // namespace citnet

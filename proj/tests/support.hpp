#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "cinn/graph.hpp"

namespace support {

inline std::filesystem::path source_dir() { return CINN_SOURCE_DIR; }
inline std::filesystem::path bh_csv() { return source_dir() / "data" / "boston_housing.csv"; }
inline std::filesystem::path bh_config() { return source_dir() / "configs" / "bh.yaml"; }

// Per-process scratch directory, created on first use.
inline std::filesystem::path scratch(const std::string& name) {
  static const auto root = [] {
    auto p = std::filesystem::temp_directory_path() / ("cinn-tests-" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
  }();
  return root / name;
}

inline std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto path = scratch(name);
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << text;
  return path;
}

// Toy categorization graph. X1..X12 are vertices 0..11 and Y is 12.
// X1 -> X9 is a root-to-leaf skip edge; X11 and X12 have no edges.
enum Toy : cinn::graph::Vertex { X1, X2, X3, X4, X5, X6, X7, X8, X9, X10, X11, X12, Y };

inline cinn::graph::CausalDag toy_graph() {
  return cinn::graph::CausalDag(13, {{X1, X4}, {X2, X6}, {X3, X5}, {X2, Y}, {X1, X9}, {X4, X8}, {Y, X8},
                                     {X5, X7}, {X6, X10}, {X8, X9}, {X4, X7}});
}

// Boston Housing DAG after expert refinement.
inline cinn::graph::CausalDag bh_refined() {
  return cinn::graph::CausalDag(14, {{0, 13}, {12, 13}, {5, 13}, {3, 13}, {10, 13}, {7, 1}, {7, 2}, {4, 11},
                                     {4, 6}, {1, 6}, {2, 9}, {8, 9}, {13, 11}},
                                   {"CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD", "TAX", "PTRATIO",
                                    "B", "LSTAT", "MEDV"});
}

}  // namespace support

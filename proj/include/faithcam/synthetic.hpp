#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faithcam/image.hpp"

namespace faithcam {

// Four-class toy corpus of filled shapes on noisy backgrounds, used for
// desk-scale end-to-end runs. Position, size and colours are random; only the
// shape carries the label.
enum class ShapeKind { circle, cross, square, triangle };

struct SyntheticOptions {
  std::size_t per_class = 150;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

// Lexicographic, matching the label order the dataset scanner produces.
std::vector<std::string> synthetic_class_names();

Image8 render_shape(ShapeKind kind, std::size_t size, std::uint64_t seed);

// Writes root/<shape>/<shape>_NNNN.png for every class. Returns image count.
std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticOptions& options);

}  // namespace faithcam

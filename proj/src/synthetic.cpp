#include "faithcam/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "faithcam/rng.hpp"

namespace faithcam {

std::vector<std::string> synthetic_class_names() { return {"circle", "cross", "square", "triangle"}; }

namespace {

bool inside(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::cross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= r && std::abs(dy) <= arm) || (std::abs(dx) <= arm && std::abs(dy) <= r);
    }
    case ShapeKind::triangle: {
      // Apex up; base of width 2r at dy = +r.
      if (dy < -r || dy > r) return false;
      const double half_width = r * (dy + r) / (2.0 * r);
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

}  // namespace

Image8 render_shape(ShapeKind kind, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  const double side = static_cast<double>(size);
  const double r = rng.uniform(0.14, 0.25) * side;
  const double cx = rng.uniform(r + 1.0, side - r - 1.0);
  const double cy = rng.uniform(r + 1.0, side - r - 1.0);
  double bg[3], fg[3];
  for (auto& c : bg) c = rng.uniform(0.0, 0.35);
  for (auto& c : fg) c = rng.uniform(0.55, 1.0);

  Image8 img{size, size, std::vector<std::uint8_t>(size * size * 3)};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const bool on = inside(kind, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (on ? fg[c] : bg[c]) + rng.uniform(-0.08, 0.08);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticOptions& options) {
  const auto names = synthetic_class_names();
  const ShapeKind kinds[] = {ShapeKind::circle, ShapeKind::cross, ShapeKind::square, ShapeKind::triangle};
  Rng seeds(options.seed);
  std::size_t written = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    for (std::size_t i = 0; i < options.per_class; ++i) {
      const auto img = render_shape(kinds[k], options.size, seeds.next());
      write_png(root / names[k] / fmt::format("{}_{:04d}.png", names[k], i), img);
      ++written;
    }
  }
  return written;
}

}  // namespace faithcam

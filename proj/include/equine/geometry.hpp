#pragma once

#include <cmath>
#include <compare>
#include <optional>

namespace equine {

/// Pixel-space rectangle, origin top-left. Covers columns [x, x+w) and rows
/// [y, y+h).
struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  long long area() const noexcept { return static_cast<long long>(w) * h; }
  int right() const noexcept { return x + w; }
  int bottom() const noexcept { return y + h; }

  friend auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

/// Round-half-up, the single rounding rule used for every geometric scaling.
inline int round_half_up(double value) noexcept {
  return static_cast<int>(std::floor(value + 0.5));
}

/// Intersection over union with box areas w*h. Returns 0 when either box is
/// degenerate.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Clips a box to [0,width) x [0,height). Empty when nothing remains.
std::optional<BoundingBox> clamp_box(const BoundingBox& box, int width, int height) noexcept;

/// Multiplies every coordinate by `factor` and rounds half-up; w and h are
/// floored at 1. Throws std::invalid_argument for factor <= 0.
BoundingBox scale_box(const BoundingBox& box, double factor);

}  // namespace equine

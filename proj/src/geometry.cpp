#include "equine/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace equine {

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) return 0.0;
  const long long ix = std::max(0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const long long iy = std::max(0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const long long inter = ix * iy;
  const long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<BoundingBox> clamp_box(const BoundingBox& box, int width, int height) noexcept {
  const int x0 = std::clamp(box.x, 0, width);
  const int y0 = std::clamp(box.y, 0, height);
  const int x1 = std::clamp(box.right(), 0, width);
  const int y1 = std::clamp(box.bottom(), 0, height);
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return BoundingBox{x0, y0, x1 - x0, y1 - y0};
}

BoundingBox scale_box(const BoundingBox& box, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_box: factor must be positive");
  return BoundingBox{round_half_up(box.x * factor), round_half_up(box.y * factor),
                     std::max(1, round_half_up(box.w * factor)),
                     std::max(1, round_half_up(box.h * factor))};
}

}  // namespace equine

#include "equine/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace equine {

Image make_uniform_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image image(width, height);
  for (std::size_t i = 0; i < image.rgb.size(); i += 3) {
    image.rgb[i] = r;
    image.rgb[i + 1] = g;
    image.rgb[i + 2] = b;
  }
  return image;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
    int lo = static_cast<int>(std::floor(s));
    taps[i] = {lo, std::min(lo + 1, src - 1), s - lo};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  if (image.empty() || width <= 0 || height <= 0) {
    throw std::invalid_argument("resize_bilinear: zero-dimension image");
  }
  if (width == image.width && height == image.height) return image;

  const auto xs = make_taps(image.width, width);
  const auto ys = make_taps(image.height, height);
  Image out(width, height);
  for (int y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(tx.lo, ty.lo, c) * (1.0 - tx.frac) +
                           image.at(tx.hi, ty.lo, c) * tx.frac;
        const double bottom = image.at(tx.lo, ty.hi, c) * (1.0 - tx.frac) +
                              image.at(tx.hi, ty.hi, c) * tx.frac;
        const double v = top * (1.0 - ty.frac) + bottom * ty.frac;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(round_half_up(v), 0, 255));
      }
    }
  }
  return out;
}

Image crop(const Image& image, const BoundingBox& box) {
  if (box.x < 0 || box.y < 0 || box.w <= 0 || box.h <= 0 || box.right() > image.width ||
      box.bottom() > image.height) {
    throw std::invalid_argument("crop: box outside image");
  }
  Image out(box.w, box.h);
  for (int y = 0; y < box.h; ++y) {
    auto src = image.rgb.begin() + ((static_cast<std::ptrdiff_t>(box.y + y) * image.width + box.x) * 3);
    std::copy(src, src + box.w * 3, out.rgb.begin() + static_cast<std::ptrdiff_t>(y) * box.w * 3);
  }
  return out;
}

}  // namespace equine

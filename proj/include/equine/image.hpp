#pragma once

#include <cstdint>
#include <vector>

#include "equine/geometry.hpp"
#include "equine/nn/tensor.hpp"

namespace equine {

/// 8-bit RGB image, interleaved, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const noexcept { return width <= 0 || height <= 0; }

  std::uint8_t& at(int x, int y, int c) noexcept {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const noexcept {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

Image make_uniform_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Bilinear resampling with half-pixel centres. Same-size resampling is the
/// identity.
Image resize_bilinear(const Image& image, int width, int height);

/// Copies the pixels of `box`, which must lie within the image.
Image crop(const Image& image, const BoundingBox& box);

/// Planar copy of the image: channel c holds R, G, B for c = 0, 1, 2, raw
/// 0..255 values.
template <typename Scalar>
nn::Tensor<Scalar> to_tensor(const Image& image) {
  nn::Tensor<Scalar> t(nn::Shape{3, image.height, image.width});
  const Eigen::Index pixels = static_cast<Eigen::Index>(image.width) * image.height;
  for (Eigen::Index p = 0; p < pixels; ++p) {
    for (int c = 0; c < 3; ++c) t.data()(c, p) = static_cast<Scalar>(image.rgb[p * 3 + c]);
  }
  return t;
}

}  // namespace equine

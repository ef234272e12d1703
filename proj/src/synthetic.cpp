#include "equine/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>

namespace equine {

namespace {

struct Rgb {
  int r, g, b;
};

constexpr std::array<Rgb, kNumEmotions> kPalette{{
    {200, 40, 40},   // Alarmed
    {40, 170, 60},   // Annoyed
    {50, 80, 210},   // Curious
    {220, 190, 60},  // Relaxed
}};

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// 1 on the "ink" part of the class texture at local coordinates (u, v).
bool ink(EmotionLabel label, int u, int v, int period, int phase) {
  const int half = period / 2;
  switch (label) {
    case EmotionLabel::Alarmed: return (v + phase) % period < half;
    case EmotionLabel::Annoyed: return (u + phase) % period < half;
    case EmotionLabel::Curious: return ((u + phase) / half + (v + phase) / half) % 2 == 0;
    case EmotionLabel::Relaxed: return (u + v + phase) % period < half;
  }
  return false;
}

}  // namespace

void paint_target(Image& image, const BoundingBox& box, EmotionLabel label, std::uint64_t seed) {
  if (box.x < 0 || box.y < 0 || box.right() > image.width || box.bottom() > image.height) {
    throw std::invalid_argument("target box outside image");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-20, 20);
  std::uniform_int_distribution<int> noise(-12, 12);
  const Rgb base = kPalette[index_of(label)];
  const Rgb col{base.r + jitter(rng), base.g + jitter(rng), base.b + jitter(rng)};
  const int period = std::uniform_int_distribution<int>(10, 18)(rng) & ~1;
  const int phase = std::uniform_int_distribution<int>(0, period - 1)(rng);
  const int frame = std::max(2, std::min(box.w, box.h) / 20);

  for (int y = box.y; y < box.bottom(); ++y) {
    for (int x = box.x; x < box.right(); ++x) {
      const int u = x - box.x;
      const int v = y - box.y;
      const bool border = u < frame || v < frame || u >= box.w - frame || v >= box.h - frame;
      std::array<int, 3> px;
      if (border) {
        px = {250, 250, 250};
      } else if (ink(label, u, v, period, phase)) {
        px = {col.r, col.g, col.b};
      } else {
        px = {col.r / 4, col.g / 4, col.b / 4};
      }
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = clamp_byte(px[c] + noise(rng));
    }
  }
}

Image make_toy_roi(EmotionLabel label, int side, std::uint64_t seed) {
  Image image(side, side);
  paint_target(image, {0, 0, side, side}, label, seed);
  return image;
}

SyntheticScene make_toy_scene(EmotionLabel label, int width, int height, std::uint64_t seed) {
  if (width < 8 || height < 8) throw std::invalid_argument("scene too small");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bg(95, 145);
  Image image(width, height);
  for (auto& v : image.rgb) v = static_cast<std::uint8_t>(bg(rng));

  const int lo = std::max(4, height * 30 / 100);
  const int hi = std::max(lo, std::min(width, height) * 55 / 100);
  std::uniform_int_distribution<int> side(lo, hi);
  const int w = std::min(width, side(rng));
  const int h = std::min(height, side(rng));
  const int x = std::uniform_int_distribution<int>(0, width - w)(rng);
  const int y = std::uniform_int_distribution<int>(0, height - h)(rng);
  const BoundingBox box{x, y, w, h};
  paint_target(image, box, label, rng());
  return {std::move(image), box, label};
}

std::vector<SyntheticScene> make_toy_scenes(int per_class, int width, int height, std::uint64_t seed) {
  std::vector<SyntheticScene> scenes;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dw(-width / 4, width / 4);
  for (EmotionLabel label : kEmotionLabels) {
    for (int i = 0; i < per_class; ++i) {
      const int w = std::max(8, width + dw(rng));
      scenes.push_back(make_toy_scene(label, w, height, rng()));
    }
  }
  return scenes;
}

}  // namespace equine

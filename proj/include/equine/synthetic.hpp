#pragma once

#include <cstdint>
#include <vector>

#include "equine/ethogram.hpp"
#include "equine/geometry.hpp"
#include "equine/image.hpp"

namespace equine {

/// Toy stand-ins for the private horse photographs. Each emotion gets its own
/// colour and texture, so the classes are trivially separable.

/// Paints the class pattern of `label` into `box` (which must lie inside the
/// image), framed by a bright border.
void paint_target(Image& image, const BoundingBox& box, EmotionLabel label, std::uint64_t seed);

/// side x side image filled with the class pattern plus pixel noise.
Image make_toy_roi(EmotionLabel label, int side, std::uint64_t seed);

struct SyntheticScene {
  Image image;
  BoundingBox box;
  EmotionLabel label{};
};

/// Low-contrast noise background with one framed target patch. The patch
/// side is 30% to 55% of the image height.
SyntheticScene make_toy_scene(EmotionLabel label, int width, int height, std::uint64_t seed);

/// `per_class` scenes of every label in canonical label order, with sizes
/// varied around width x height.
std::vector<SyntheticScene> make_toy_scenes(int per_class, int width, int height, std::uint64_t seed);

}  // namespace equine

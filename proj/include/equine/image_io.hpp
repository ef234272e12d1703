#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "equine/image.hpp"

namespace equine {

/// Decodes PNG or JPEG bytes (detected by signature) to 8-bit RGB.
/// Throws DataError on unsupported or corrupt input.
Image decode_image(std::span<const std::uint8_t> bytes);

Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const Image& image, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace equine

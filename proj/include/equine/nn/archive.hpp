#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "equine/nn/layers.hpp"
#include "json.hpp"

namespace equine::nn {

/// Model artifact layout, little-endian:
///   8 bytes   magic "EQUINEMD"
///   u32       format version
///   u64       header length N
///   N bytes   JSON header {"kind", "version_tag", ..., "tensors": [{name, rows, cols}]}
///   float32   tensor payloads, column-major, in header order
inline constexpr std::uint32_t kArchiveFormatVersion = 1;

struct ArchiveHeader {
  std::uint32_t format_version = kArchiveFormatVersion;
  nlohmann::json json;
};

void write_archive(const std::filesystem::path& path, nlohmann::json header,
                   const std::vector<const Parameter<float>*>& tensors);

/// Reads the header only. Throws ModelError on a bad magic or an unsupported
/// format version.
ArchiveHeader read_archive_header(const std::filesystem::path& path);

/// Reads header and payloads, assigning each stored tensor to the parameter of
/// the same name. Every parameter must be present with matching dimensions.
ArchiveHeader read_archive(const std::filesystem::path& path,
                           const std::vector<Parameter<float>*>& tensors,
                           const std::string& expected_kind);

/// 64-bit FNV-1a over the file bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace equine::nn

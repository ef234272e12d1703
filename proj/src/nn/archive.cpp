#include "equine/nn/archive.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "equine/error.hpp"

namespace equine::nn {
namespace {

constexpr std::array<char, 8> kMagic{'E', 'Q', 'U', 'I', 'N', 'E', 'M', 'D'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ModelError("truncated model artifact");
  return value;
}

ArchiveHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ModelError(path.string() + ": not a model artifact");
  ArchiveHeader header;
  header.format_version = read_pod<std::uint32_t>(in);
  if (header.format_version != kArchiveFormatVersion) {
    throw ModelError(path.string() + ": model format version " +
                     std::to_string(header.format_version) + " not supported (expected " +
                     std::to_string(kArchiveFormatVersion) + ")");
  }
  const auto len = read_pod<std::uint64_t>(in);
  if (len > (1u << 26)) throw ModelError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ModelError(path.string() + ": truncated header");
  try {
    header.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(path.string() + ": corrupt header: " + e.what());
  }
  return header;
}

}  // namespace

void write_archive(const std::filesystem::path& path, nlohmann::json header,
                   const std::vector<const Parameter<float>*>& tensors) {
  auto& index = header["tensors"] = nlohmann::json::array();
  for (const auto* t : tensors) {
    index.push_back({{"name", t->name}, {"rows", t->value.rows()}, {"cols", t->value.cols()}});
  }
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelError("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_pod<std::uint32_t>(out, kArchiveFormatVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : tensors) {
      out.write(reinterpret_cast<const char*>(t->value.data()),
                static_cast<std::streamsize>(t->value.size() * sizeof(float)));
    }
    if (!out) throw ModelError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ArchiveHeader read_archive_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model " + path.string());
  return read_header(in, path);
}

ArchiveHeader read_archive(const std::filesystem::path& path,
                           const std::vector<Parameter<float>*>& tensors,
                           const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model " + path.string());
  ArchiveHeader header = read_header(in, path);
  if (header.json.value("kind", "") != expected_kind) {
    throw ModelError(path.string() + ": expected a " + expected_kind + " model, found '" +
                     header.json.value("kind", "") + "'");
  }

  std::map<std::string, Parameter<float>*> by_name;
  for (auto* t : tensors) by_name[t->name] = t;
  std::size_t assigned = 0;
  for (const auto& entry : header.json.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ModelError(path.string() + ": unexpected tensor " + name);
    auto& value = it->second->value;
    if (value.rows() != rows || value.cols() != cols) {
      throw ModelError(path.string() + ": shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(float)));
    if (!in) throw ModelError(path.string() + ": truncated payload at " + name);
    ++assigned;
  }
  if (assigned != tensors.size()) throw ModelError(path.string() + ": missing tensors");
  return header;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buffer[static_cast<std::size_t>(i)]);
      hash *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  return hex;
}

}  // namespace equine::nn

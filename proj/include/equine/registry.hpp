#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "equine/classifier.hpp"
#include "equine/detector.hpp"

namespace equine {

enum class ModelKind { detector, classifier };

std::string_view to_string(ModelKind kind) noexcept;
std::optional<ModelKind> parse_model_kind(std::string_view text) noexcept;

struct ModelRegistryEntry {
  ModelKind kind{};
  std::string version;
  std::filesystem::path path;
  bool loaded = false;
  std::string checksum;
};

/// The jointly active detector/classifier pair. Never mutated once published.
struct ActiveModels {
  std::shared_ptr<const DetectorModel> detector;
  std::shared_ptr<const ClassifierModel> classifier;

  bool ready() const noexcept { return detector && classifier; }
};

/// Known artifacts plus the active pair. Activation loads and verifies the
/// artifact off-lock, then publishes a new ActiveModels snapshot; readers
/// holding the old snapshot keep using it.
class ModelRegistry {
 public:
  /// Reads the artifact header for kind and version tag and records its
  /// checksum. Re-registering a (kind, version) replaces the entry.
  ModelRegistryEntry register_artifact(const std::filesystem::path& path);

  /// Registers every regular file in `dir` that parses as an artifact.
  void scan(const std::filesystem::path& dir);

  /// Throws ModelError when the version is unknown, the file is gone, or its
  /// checksum changed since registration.
  void activate(ModelKind kind, const std::string& version);

  std::shared_ptr<const ActiveModels> active() const;
  std::vector<ModelRegistryEntry> entries() const;

 private:
  mutable std::mutex mutex_;
  std::vector<ModelRegistryEntry> entries_;
  std::shared_ptr<const ActiveModels> active_ = std::make_shared<ActiveModels>();
};

}  // namespace equine

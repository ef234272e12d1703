#include "equine/registry.hpp"

#include <algorithm>

#include "equine/error.hpp"
#include "equine/nn/archive.hpp"

namespace equine {

std::string_view to_string(ModelKind kind) noexcept {
  return kind == ModelKind::detector ? "detector" : "classifier";
}

std::optional<ModelKind> parse_model_kind(std::string_view text) noexcept {
  if (text == "detector") return ModelKind::detector;
  if (text == "classifier") return ModelKind::classifier;
  return std::nullopt;
}

ModelRegistryEntry ModelRegistry::register_artifact(const std::filesystem::path& path) {
  const auto header = nn::read_archive_header(path);
  const auto kind = parse_model_kind(header.json.value("kind", ""));
  if (!kind) throw ModelError(path.string() + ": unknown artifact kind");
  ModelRegistryEntry entry{*kind, header.json.value("version_tag", "v1"), path, false, nn::file_checksum(path)};

  std::lock_guard lock(mutex_);
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ModelRegistryEntry& e) {
    return e.kind == entry.kind && e.version == entry.version;
  });
  if (it != entries_.end()) {
    *it = entry;
  } else {
    entries_.push_back(entry);
  }
  return entry;
}

void ModelRegistry::scan(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ModelError("model directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (f.is_regular_file()) files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      register_artifact(f);
    } catch (const ModelError&) {
      // not an artifact
    }
  }
}

void ModelRegistry::activate(ModelKind kind, const std::string& version) {
  std::optional<ModelRegistryEntry> entry;
  {
    std::lock_guard lock(mutex_);
    for (const auto& e : entries_) {
      if (e.kind == kind && e.version == version) entry = e;
    }
  }
  const std::string what = std::string(to_string(kind)) + " " + version;
  if (!entry) throw ModelError("no " + what + " registered");
  if (!std::filesystem::exists(entry->path)) throw ModelError(what + ": artifact missing at " + entry->path.string());
  if (nn::file_checksum(entry->path) != entry->checksum) throw ModelError(what + ": checksum mismatch");

  std::shared_ptr<const DetectorModel> detector;
  std::shared_ptr<const ClassifierModel> classifier;
  if (kind == ModelKind::detector) {
    auto m = load_detector(entry->path);
    m.set_version_tag(version);
    detector = std::make_shared<const DetectorModel>(std::move(m));
  } else {
    auto m = load_classifier(entry->path);
    m.set_version_tag(version);
    classifier = std::make_shared<const ClassifierModel>(std::move(m));
  }

  std::lock_guard lock(mutex_);
  auto next = std::make_shared<ActiveModels>(*active_);
  if (detector) next->detector = std::move(detector);
  if (classifier) next->classifier = std::move(classifier);
  active_ = std::move(next);
  for (auto& e : entries_) {
    if (e.kind == kind) e.loaded = e.version == version;
  }
}

std::shared_ptr<const ActiveModels> ModelRegistry::active() const {
  std::lock_guard lock(mutex_);
  return active_;
}

std::vector<ModelRegistryEntry> ModelRegistry::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

}  // namespace equine

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "equine/ethogram.hpp"
#include "equine/geometry.hpp"
#include "equine/image.hpp"

namespace equine {

struct ImageRecord {
  std::string id;
  std::string uri;
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Head-and-neck ROI of one image plus optional emotion label and cues.
struct Annotation {
  std::string image_id;
  BoundingBox box;
  std::optional<EmotionLabel> label;
  std::optional<CueAnnotation> cues;
  /// Set when the label deliberately disagrees with classify_cues(cues).
  bool override_mismatch = false;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// Image records, at most one annotation per image, and named splits. Split
/// names "scheme/part" group into schemes (e.g. "fold3/train", "fold3/val");
/// unprefixed names form the default scheme.
struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::vector<Annotation> annotations;
  std::map<std::string, std::vector<std::string>> splits;

  const ImageRecord* find_record(const std::string& id) const;
  const Annotation* find_annotation(const std::string& image_id) const;
  Annotation* find_annotation(const std::string& image_id);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Throws DataError describing the first violated invariant.
void validate_manifest(const DatasetManifest& manifest);

/// One JSON object per line. Records carry {id, uri, width, height};
/// annotations {image_id, box:[x,y,w,h], label?, cues?, override?}; splits
/// {split, ids}. Blank lines are ignored.
DatasetManifest parse_manifest(std::istream& in);
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
/// Writes to a temporary sibling and renames it over `path`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Resolves a record uri relative to the manifest's directory.
std::filesystem::path resolve_uri(const std::filesystem::path& manifest_path, const std::string& uri);

struct RescaleResult {
  Image image;
  double scale_factor = 1.0;
};

/// Resizes to `target_height` keeping the aspect ratio; width is
/// round_half_up(width * target / height), at least 1.
RescaleResult rescale_to_height(const Image& image, int target_height = 200);

/// Clamps `box` to the image, crops, and resizes bilinearly to side x side
/// (aspect ratio not preserved). Throws DataError when the box misses the image.
Image crop_and_resize(const Image& image, const BoundingBox& box, int side = 150);

struct SplitSpec {
  int train_per_class = 100;
  int val_per_class = 20;
  std::uint64_t seed = 0;
};

/// Labeled image ids grouped by class, each group sorted lexicographically.
std::array<std::vector<std::string>, kNumEmotions> labeled_ids_by_class(const DatasetManifest& manifest);

/// Returns a copy of `manifest` whose "train" and "val" splits hold exactly
/// train_per_class and val_per_class images of every class.
DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitSpec& spec);

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

/// Stratified k-fold partition of the labeled images.
std::vector<FoldSplit> kfold_split(const DatasetManifest& manifest, int k, std::uint64_t seed);

/// Stores folds as splits "foldN/train" and "foldN/val", replacing older folds.
DatasetManifest with_fold_splits(const DatasetManifest& manifest, const std::vector<FoldSplit>& folds);

/// Deterministic Fisher-Yates shuffle driven by mt19937_64, identical on every
/// standard library.
void seeded_shuffle(std::vector<std::string>& items, std::uint64_t seed);

}  // namespace equine

#include "equine/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "equine/error.hpp"
#include "equine/serialization.hpp"

namespace equine {
namespace {

std::string scheme_of(const std::string& split_name) {
  auto slash = split_name.find('/');
  return slash == std::string::npos ? std::string() : split_name.substr(0, slash);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform integer in [0, n) by rejection, independent of the standard
/// library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % n;
}

}  // namespace

const ImageRecord* DatasetManifest::find_record(const std::string& id) const {
  auto it = std::find_if(records.begin(), records.end(), [&](const ImageRecord& r) { return r.id == id; });
  return it == records.end() ? nullptr : &*it;
}

const Annotation* DatasetManifest::find_annotation(const std::string& image_id) const {
  auto it = std::find_if(annotations.begin(), annotations.end(),
                         [&](const Annotation& a) { return a.image_id == image_id; });
  return it == annotations.end() ? nullptr : &*it;
}

Annotation* DatasetManifest::find_annotation(const std::string& image_id) {
  return const_cast<Annotation*>(std::as_const(*this).find_annotation(image_id));
}

void validate_manifest(const DatasetManifest& m) {
  std::map<std::string, const ImageRecord*> records;
  for (const auto& r : m.records) {
    if (r.width < 1 || r.height < 1) throw DataError("image " + r.id + " has a zero dimension");
    if (!records.emplace(r.id, &r).second) throw DataError("duplicate id " + r.id);
  }

  std::set<std::string> annotated;
  for (const auto& a : m.annotations) {
    auto it = records.find(a.image_id);
    if (it == records.end()) throw DataError("dangling image_id " + a.image_id);
    if (!annotated.insert(a.image_id).second) throw DataError("duplicate annotation for " + a.image_id);
    const ImageRecord& r = *it->second;
    if (a.box.x < 0 || a.box.y < 0 || a.box.w < 1 || a.box.h < 1 || a.box.right() > r.width ||
        a.box.bottom() > r.height) {
      throw DataError("box outside image " + a.image_id);
    }
    if (a.label && a.cues && !a.override_mismatch && classify_cues(*a.cues).best != *a.label) {
      throw DataError("cue/label mismatch for " + a.image_id + " without override flag");
    }
  }

  std::map<std::string, std::set<std::string>> scheme_members;
  for (const auto& [name, ids] : m.splits) {
    std::set<std::string> seen;
    auto& scheme = scheme_members[scheme_of(name)];
    for (const auto& id : ids) {
      if (!records.count(id)) throw DataError("split " + name + " references unknown id " + id);
      if (!seen.insert(id).second) throw DataError("split " + name + " lists " + id + " twice");
      if (!scheme.insert(id).second) throw DataError("splits overlap on " + id + " in " + name);
    }
  }
}

DatasetManifest parse_manifest(std::istream& in) {
  DatasetManifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError("malformed record");
      if (j.contains("split")) {
        auto name = j.at("split").get<std::string>();
        if (m.splits.count(name)) throw DataError("duplicate split " + name);
        m.splits[name] = j.at("ids").get<std::vector<std::string>>();
      } else if (j.contains("image_id")) {
        m.annotations.push_back(j.get<Annotation>());
      } else if (j.contains("id")) {
        m.records.push_back(j.get<ImageRecord>());
      } else {
        throw DataError("malformed record");
      }
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    }
  }
  validate_manifest(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest not found: " + path.string());
  return parse_manifest(in);
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  for (const auto& r : m.records) out << nlohmann::json(r).dump() << '\n';
  for (const auto& a : m.annotations) out << nlohmann::json(a).dump() << '\n';
  for (const auto& [name, ids] : m.splits) {
    out << nlohmann::json{{"split", name}, {"ids", ids}}.dump() << '\n';
  }
  return out.str();
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate_manifest(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << format_manifest(m);
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path resolve_uri(const std::filesystem::path& manifest_path, const std::string& uri) {
  std::filesystem::path p(uri);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

RescaleResult rescale_to_height(const Image& image, int target_height) {
  if (image.empty()) throw DataError("cannot rescale a zero-dimension image");
  if (target_height < 1) throw UsageError("target height must be >= 1");
  const double factor = static_cast<double>(target_height) / image.height;
  const int width = std::max(1, round_half_up(image.width * factor));
  return {resize_bilinear(image, width, target_height), factor};
}

Image crop_and_resize(const Image& image, const BoundingBox& box, int side) {
  if (side < 1) throw UsageError("crop side must be >= 1");
  auto clamped = clamp_box(box, image.width, image.height);
  if (!clamped) throw DataError("box entirely outside image");
  return resize_bilinear(crop(image, *clamped), side, side);
}

std::array<std::vector<std::string>, kNumEmotions> labeled_ids_by_class(const DatasetManifest& m) {
  std::array<std::vector<std::string>, kNumEmotions> by_class;
  for (const auto& a : m.annotations) {
    if (a.label) by_class[index_of(*a.label)].push_back(a.image_id);
  }
  for (auto& ids : by_class) std::sort(ids.begin(), ids.end());
  return by_class;
}

void seeded_shuffle(std::vector<std::string>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_below(rng, i)]);
  }
}

DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  if (spec.train_per_class < 1 || spec.val_per_class < 1) {
    throw UsageError("split counts must be >= 1");
  }
  const auto by_class = labeled_ids_by_class(manifest);
  const auto need = static_cast<std::size_t>(spec.train_per_class + spec.val_per_class);

  std::vector<std::string> train, val;
  for (EmotionLabel label : kEmotionLabels) {
    auto ids = by_class[index_of(label)];
    if (ids.size() < need) {
      throw DataError("insufficient class " + std::string(to_string(label)) + ": have " +
                      std::to_string(ids.size()) + ", need " + std::to_string(need));
    }
    seeded_shuffle(ids, splitmix64(spec.seed + index_of(label)));
    train.insert(train.end(), ids.begin(), ids.begin() + spec.train_per_class);
    val.insert(val.end(), ids.begin() + spec.train_per_class, ids.begin() + static_cast<std::ptrdiff_t>(need));
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());

  DatasetManifest out = manifest;
  out.splits["train"] = std::move(train);
  out.splits["val"] = std::move(val);
  validate_manifest(out);
  return out;
}

std::vector<FoldSplit> kfold_split(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw UsageError("k must be >= 2");
  const auto by_class = labeled_ids_by_class(manifest);
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (EmotionLabel label : kEmotionLabels) {
    auto ids = by_class[index_of(label)];
    if (ids.size() < static_cast<std::size_t>(k)) {
      throw DataError("class " + std::string(to_string(label)) + " has fewer than k=" +
                      std::to_string(k) + " images");
    }
    seeded_shuffle(ids, splitmix64(seed + index_of(label)));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t f = i % static_cast<std::size_t>(k);
      for (std::size_t g = 0; g < folds.size(); ++g) {
        (g == f ? folds[g].val : folds[g].train).push_back(ids[i]);
      }
    }
  }
  for (auto& fold : folds) {
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
  }
  return folds;
}

DatasetManifest with_fold_splits(const DatasetManifest& manifest, const std::vector<FoldSplit>& folds) {
  DatasetManifest out = manifest;
  for (auto it = out.splits.begin(); it != out.splits.end();) {
    it = it->first.rfind("fold", 0) == 0 && it->first.find('/') != std::string::npos
             ? out.splits.erase(it)
             : std::next(it);
  }
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::string prefix = "fold" + std::to_string(f + 1);
    out.splits[prefix + "/train"] = folds[f].train;
    out.splits[prefix + "/val"] = folds[f].val;
  }
  validate_manifest(out);
  return out;
}

}  // namespace equine

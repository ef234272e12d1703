#include "equine/serialization.hpp"

#include "equine/error.hpp"

namespace equine {
namespace {

template <typename Enum, typename Parser>
Enum parse_or_throw(const nlohmann::json& j, Parser parse, const char* what) {
  if (!j.is_string()) throw DataError(std::string("expected string for ") + what);
  auto text = j.get<std::string>();
  auto value = parse(text);
  if (!value) throw DataError(std::string("unknown ") + what + " '" + text + "'");
  return *value;
}

}  // namespace

void to_json(nlohmann::json& j, EmotionLabel label) { j = std::string(to_string(label)); }

void from_json(const nlohmann::json& j, EmotionLabel& label) {
  label = parse_or_throw<EmotionLabel>(j, parse_emotion, "label");
}

void to_json(nlohmann::json& j, const CueAnnotation& cues) {
  j = {{"eyes", to_string(cues.eyes)},
       {"ears", to_string(cues.ears)},
       {"nose", to_string(cues.nose)},
       {"neck", to_string(cues.neck)}};
}

void from_json(const nlohmann::json& j, CueAnnotation& cues) {
  if (!j.is_object()) throw DataError("cues must be an object");
  for (const char* key : {"eyes", "ears", "nose", "neck"}) {
    if (!j.contains(key)) throw DataError(std::string("cues missing ") + key);
  }
  cues.eyes = parse_or_throw<Eyes>(j.at("eyes"), parse_eyes, "eyes cue");
  cues.ears = parse_or_throw<Ears>(j.at("ears"), parse_ears, "ears cue");
  cues.nose = parse_or_throw<Nose>(j.at("nose"), parse_nose, "nose cue");
  cues.neck = parse_or_throw<Neck>(j.at("neck"), parse_neck, "neck cue");
}

void to_json(nlohmann::json& j, const BoundingBox& box) { j = {box.x, box.y, box.w, box.h}; }

void from_json(const nlohmann::json& j, BoundingBox& box) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be [x, y, w, h]");
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw DataError("box coordinates must be integers");
  }
  box = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1) throw DataError("invalid box");
}

void to_json(nlohmann::json& j, const ImageRecord& r) {
  j = {{"id", r.id}, {"uri", r.uri}, {"width", r.width}, {"height", r.height}};
}

void from_json(const nlohmann::json& j, ImageRecord& r) {
  try {
    r.id = j.at("id").get<std::string>();
    r.uri = j.at("uri").get<std::string>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed image record: ") + e.what());
  }
  if (r.id.empty()) throw DataError("malformed image record: empty id");
  if (r.width < 1 || r.height < 1) throw DataError("malformed image record: bad size for " + r.id);
}

void to_json(nlohmann::json& j, const Annotation& a) {
  j = {{"image_id", a.image_id}, {"box", a.box}};
  if (a.label) j["label"] = *a.label;
  if (a.cues) j["cues"] = *a.cues;
  if (a.override_mismatch) j["override"] = true;
}

void from_json(const nlohmann::json& j, Annotation& a) {
  if (!j.contains("image_id") || !j.at("image_id").is_string()) {
    throw DataError("malformed annotation: missing image_id");
  }
  if (!j.contains("box")) throw DataError("malformed annotation: missing box");
  a.image_id = j.at("image_id").get<std::string>();
  a.box = j.at("box").get<BoundingBox>();
  a.label.reset();
  a.cues.reset();
  if (j.contains("label") && !j.at("label").is_null()) a.label = j.at("label").get<EmotionLabel>();
  if (j.contains("cues") && !j.at("cues").is_null()) a.cues = j.at("cues").get<CueAnnotation>();
  a.override_mismatch = j.value("override", false);
}

nlohmann::json profile_table_json(const CueProfileTable& table) {
  auto rows = nlohmann::json::array();
  for (const auto& row : table.rows()) rows.push_back({{"label", row.label}, {"cues", row.cues}});
  return {{"version", 1}, {"profiles", rows}};
}

}  // namespace equine

#pragma once

#include "equine/dataset.hpp"
#include "equine/ethogram.hpp"
#include "equine/geometry.hpp"
#include "json.hpp"

namespace equine {

// nlohmann::json adapters. Enums travel as their canonical names, boxes as
// [x, y, w, h]. from_json throws DataError on unknown names.

void to_json(nlohmann::json& j, EmotionLabel label);
void from_json(const nlohmann::json& j, EmotionLabel& label);

void to_json(nlohmann::json& j, const CueAnnotation& cues);
void from_json(const nlohmann::json& j, CueAnnotation& cues);

void to_json(nlohmann::json& j, const BoundingBox& box);
void from_json(const nlohmann::json& j, BoundingBox& box);

void to_json(nlohmann::json& j, const ImageRecord& record);
void from_json(const nlohmann::json& j, ImageRecord& record);

void to_json(nlohmann::json& j, const Annotation& annotation);
void from_json(const nlohmann::json& j, Annotation& annotation);

nlohmann::json profile_table_json(const CueProfileTable& table);

}  // namespace equine

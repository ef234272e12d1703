#pragma once

#include "equine/classifier.hpp"
#include "equine/detector.hpp"
#include "equine/geometry.hpp"
#include "equine/image.hpp"
#include "json.hpp"

namespace equine {

/// Height the detector sees and side of the classifier crop.
inline constexpr int kDetectorHeight = 200;
inline constexpr int kClassifierSide = 150;

struct StageTimings {
  double rescale_ms = 0.0;
  double detect_ms = 0.0;
  double crop_ms = 0.0;
  double classify_ms = 0.0;
  double total_ms = 0.0;
};

struct PipelineResult {
  /// In original image coordinates.
  BoundingBox roi;
  double detection_score = 0.0;
  Prediction prediction;
  StageTimings timings;
  /// Detector output in the rescaled image and the rescale factor.
  BoundingBox detected_box;
  double scale_factor = 1.0;
};

/// Throws ModelError unless the detector runs at 200 px height and the
/// classifier takes 150 x 150 crops.
void check_pipeline_models(const DetectorModel& detector, const ClassifierModel& classifier);

/// rescale_to_height(200), detect, best_roi, scale_box(1/factor) clamped to
/// the original, crop_and_resize(original, 150), predict. Throws NoRoiError
/// when nothing is detected.
PipelineResult infer(const DetectorModel& detector, const ClassifierModel& classifier, const Image& image);

/// {roi:[x,y,w,h], score, label, probabilities[4]}.
nlohmann::json prediction_body(const PipelineResult& result);
nlohmann::json timings_json(const StageTimings& timings);

}  // namespace equine

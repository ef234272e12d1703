#include "equine/pipeline.hpp"

#include <chrono>

#include "equine/dataset.hpp"
#include "equine/error.hpp"
#include "equine/serialization.hpp"

namespace equine {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point& mark) {
  const auto now = Clock::now();
  const double ms = std::chrono::duration<double, std::milli>(now - mark).count();
  mark = now;
  return ms;
}

}  // namespace

void check_pipeline_models(const DetectorModel& detector, const ClassifierModel& classifier) {
  if (detector.config().input_height != kDetectorHeight) {
    throw ModelError("detector " + detector.version_tag() + " expects height " +
                     std::to_string(detector.config().input_height) + ", pipeline uses " +
                     std::to_string(kDetectorHeight));
  }
  if (classifier.config().input_side != kClassifierSide) {
    throw ModelError("classifier " + classifier.version_tag() + " expects " +
                     std::to_string(classifier.config().input_side) + " px crops, pipeline uses " +
                     std::to_string(kClassifierSide));
  }
}

PipelineResult infer(const DetectorModel& detector, const ClassifierModel& classifier, const Image& image) {
  check_pipeline_models(detector, classifier);
  if (image.empty()) throw DataError("empty image");
  PipelineResult r;
  const auto start = Clock::now();
  auto mark = start;

  const RescaleResult scaled = rescale_to_height(image, kDetectorHeight);
  r.scale_factor = scaled.scale_factor;
  r.timings.rescale_ms = ms_since(mark);

  const auto detections = detect(detector, scaled.image);
  const auto best = best_roi(detections);
  r.timings.detect_ms = ms_since(mark);
  if (!best) throw NoRoiError();
  r.detected_box = best->box;
  r.detection_score = best->score;

  const auto roi = clamp_box(scale_box(best->box, 1.0 / scaled.scale_factor), image.width, image.height);
  if (!roi) throw NoRoiError("detected ROI maps outside the image");
  r.roi = *roi;
  const Image crop = crop_and_resize(image, r.roi, kClassifierSide);
  r.timings.crop_ms = ms_since(mark);

  r.prediction = predict(classifier, crop);
  r.timings.classify_ms = ms_since(mark);
  r.timings.total_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return r;
}

nlohmann::json prediction_body(const PipelineResult& result) {
  return {{"roi", result.roi},
          {"score", result.detection_score},
          {"label", result.prediction.label},
          {"probabilities", result.prediction.probabilities}};
}

nlohmann::json timings_json(const StageTimings& t) {
  return {{"rescale", t.rescale_ms}, {"detect", t.detect_ms}, {"crop", t.crop_ms},
          {"classify", t.classify_ms}, {"total", t.total_ms}};
}

}  // namespace equine

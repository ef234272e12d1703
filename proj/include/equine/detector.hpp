#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "equine/geometry.hpp"
#include "equine/image.hpp"
#include "equine/nn/layers.hpp"
#include "json.hpp"

namespace equine {

struct Detection {
  BoundingBox box;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectorConfig {
  std::vector<double> anchor_scales{32, 64, 128};
  /// Height over width.
  std::vector<double> anchor_ratios{0.5, 1, 2};
  double proposal_nms_iou = 0.7;
  double score_threshold = 0.5;
  int epochs = 4000;

  int input_height = 200;
  double learning_rate = 1e-3;
  int pre_nms_top_n = 300;
  int post_nms_top_n = 32;
  int rpn_batch = 64;
  int roi_batch = 16;
  std::uint64_t seed = 0;
};

void validate_config(const DetectorConfig& config);
nlohmann::json config_json(const DetectorConfig& config);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

/// Two-stage detector. A four-stage convolutional backbone (stride 16) feeds
/// a region proposal network over scale x ratio anchors; proposals are max
/// pooled to 4x4 and scored by a small fully connected head that also
/// refines the box.
class DetectorModel {
 public:
  explicit DetectorModel(DetectorConfig config);
  DetectorModel(const DetectorModel& other);
  DetectorModel& operator=(const DetectorModel& other);
  DetectorModel(DetectorModel&&) noexcept = default;
  DetectorModel& operator=(DetectorModel&&) noexcept = default;

  const DetectorConfig& config() const noexcept { return config_; }
  const std::string& version_tag() const noexcept { return version_tag_; }
  void set_version_tag(std::string tag) { version_tag_ = std::move(tag); }

  /// Parameters in a fixed order: backbone, rpn, head.
  std::vector<nn::Parameter<float>*> parameters();
  std::vector<const nn::Parameter<float>*> parameters() const;

 private:
  friend struct DetectorNet;

  DetectorConfig config_;
  std::string version_tag_ = "v1";
  nn::Sequential<float> backbone_{"backbone"};
  nn::Sequential<float> rpn_conv_{"rpn"};
  std::unique_ptr<nn::Conv2d<float>> rpn_cls_;
  std::unique_ptr<nn::Conv2d<float>> rpn_bbox_;
  nn::Sequential<float> head_{"roi_head"};
};

/// One image at the detector's input height with its single ground-truth box.
struct DetectorSample {
  Image image;
  BoundingBox box;
};

struct DetectorTraining {
  DetectorModel model;
  /// Mean loss of each epoch, in order.
  std::vector<double> loss_curve;
};

/// Builds a seeded model and runs config.epochs passes over `train`, one
/// optimisation step per image. Untrained region scores start near 0.01.
DetectorTraining train_detector(std::span<const DetectorSample> train, const DetectorConfig& config);

/// Detections scoring at least the threshold, after non-maximum suppression,
/// sorted by descending score.
std::vector<Detection> detect(const DetectorModel& model, const Image& image);

/// Highest score; ties go to the smaller (x, y).
std::optional<Detection> best_roi(std::span<const Detection> detections);

/// Greedy suppression in descending score order. Input need not be sorted.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

struct DetectorImageResult {
  std::optional<Detection> best;
  double iou = 0.0;
  bool correct = false;
};

struct DetectorEvaluation {
  /// Correct over images with a detection; none when nothing was detected.
  std::optional<double> precision;
  double recall = 0.0;
  std::vector<DetectorImageResult> per_image;
};

DetectorEvaluation evaluate_detector(const DetectorModel& model, std::span<const DetectorSample> val,
                                     double iou_threshold = 0.5);

void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

/// "epoch,loss" header then one row per epoch.
std::string format_loss_curve(std::span<const double> curve);

}  // namespace equine

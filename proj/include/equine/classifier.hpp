#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "equine/ethogram.hpp"
#include "equine/image.hpp"
#include "equine/nn/layers.hpp"
#include "equine/report.hpp"

namespace equine {

/// Convolutional bases, structurally matching the Keras application models
/// of the same name with the classification top removed.
enum class BaseArchitecture { Vgg16, ResNet50V2, Xception };

std::string_view to_string(BaseArchitecture base) noexcept;
std::optional<BaseArchitecture> parse_base(std::string_view text) noexcept;

/// Input normalisation convention of a base. Caffe: BGR order with the
/// ImageNet channel means subtracted. Tf: RGB scaled to [-1, 1].
enum class Preprocessing { Caffe, Tf };

std::string_view to_string(Preprocessing p) noexcept;

struct ClassifierConfig {
  BaseArchitecture base = BaseArchitecture::Vgg16;
  int input_side = 150;
  std::array<int, 2> head_widths{256, 128};
  int num_classes = 4;
  int epochs = 40;
  double learning_rate = 1e-4;
  int batch_size = 16;
  std::uint64_t seed = 0;
  /// Divides every base channel count. 1 is the reference width; larger
  /// values give structurally identical, cheaper networks.
  int width_divisor = 1;
};

/// Throws UsageError for an invalid config and ModelError when the input is
/// smaller than the base accepts.
void validate_config(const ClassifierConfig& config);

nlohmann::json config_json(const ClassifierConfig& config);
ClassifierConfig config_from_json(const nlohmann::json& j);

/// Named range [first, last) of top-level network layers.
struct BlockInfo {
  std::string name;
  std::size_t first = 0;
  std::size_t last = 0;
};

struct Prediction {
  std::array<double, kNumEmotions> probabilities{};
  EmotionLabel label{};

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Softmax over raw class scores; argmax ties go to the earlier label.
Prediction prediction_from_scores(const Eigen::VectorXd& scores);

/// Convolutional base + flatten + dense(256) + dense(128) + 4-way softmax.
/// Top-level layers are the base's layers followed by the head's; blocks()
/// partitions them.
class ClassifierModel {
 public:
  const ClassifierConfig& config() const noexcept { return config_; }
  Preprocessing preprocessing() const noexcept { return preprocessing_; }
  const std::string& version_tag() const noexcept { return version_tag_; }
  void set_version_tag(std::string tag) { version_tag_ = std::move(tag); }

  const nn::Sequential<float>& network() const noexcept { return network_; }
  nn::Sequential<float>& network() noexcept { return network_; }

  /// Base blocks in order, then "head".
  const std::vector<BlockInfo>& blocks() const noexcept { return blocks_; }
  std::size_t head_begin() const noexcept { return head_begin_; }

  nn::Shape input_shape() const noexcept { return {3, config_.input_side, config_.input_side}; }
  nn::Shape feature_shape() const;
  std::size_t flattened_features() const;
  std::size_t head_parameter_count() const;
  std::size_t base_parameter_count() const;

  /// One flag per top-level layer.
  const std::vector<bool>& trainable_layers() const noexcept { return trainable_; }
  bool freeze_applied() const noexcept { return freeze_applied_; }
  std::vector<std::string> trainable_parameter_names() const;
  std::vector<std::string> frozen_parameter_names() const;

  nn::Tensor<float> preprocess(const Image& image) const;
  Eigen::VectorXd scores(const Image& image) const;

 private:
  friend ClassifierModel make_classifier(const ClassifierConfig&, nn::Sequential<float>,
                                         std::vector<BlockInfo>, Preprocessing);
  friend void apply_freeze_policy(ClassifierModel&);
  friend ClassifierModel load_classifier(const std::filesystem::path&);

  ClassifierConfig config_;
  Preprocessing preprocessing_ = Preprocessing::Caffe;
  std::string version_tag_ = "v1";
  nn::Sequential<float> network_{"classifier"};
  std::vector<BlockInfo> blocks_;
  std::size_t head_begin_ = 0;
  std::vector<bool> trainable_;
  bool freeze_applied_ = false;
};

/// Builds the configured base with seeded weights and attaches the head.
/// For bases with batch normalisation, running statistics are calibrated on
/// a fixed pseudo-random image so activations stay well scaled.
ClassifierModel build_classifier(const ClassifierConfig& config);

/// Attaches the head to a caller-supplied base. `blocks` may be empty, in
/// which case apply_freeze_policy fails.
ClassifierModel make_classifier(const ClassifierConfig& config, nn::Sequential<float> base,
                                std::vector<BlockInfo> blocks, Preprocessing preprocessing);

/// Marks the last base block and the head trainable, everything before
/// frozen. Idempotent. Throws ModelError if the base has no blocks.
void apply_freeze_policy(ClassifierModel& model);

struct LabeledImage {
  Image image;
  EmotionLabel label{};
};

/// Trains the trainable layers with softmax cross-entropy and Adam, using
/// epochs, learning rate, batch size and seed from `config`. Frozen-prefix
/// activations are computed once and reused, which is exact since frozen
/// weights never change. Epoch metrics are measured on the end-of-epoch model.
TrainReport train_classifier(ClassifierModel& model, std::span<const LabeledImage> train,
                             std::span<const LabeledImage> val, const ClassifierConfig& config);

Prediction predict(const ClassifierModel& model, const Image& roi);

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace equine

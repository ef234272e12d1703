#include "equine/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "equine/error.hpp"
#include "equine/nn/adam.hpp"
#include "equine/nn/archive.hpp"
#include "equine/nn/loss.hpp"

namespace equine {

using nn::BatchNorm;
using nn::Conv2d;
using nn::Dense;
using nn::DepthwiseConv2d;
using nn::Flatten;
using nn::MaxPool2d;
using nn::Padding;
using nn::Relu;
using nn::Residual;
using nn::Sequential;

namespace {

constexpr const char* kArtifactKind = "classifier";

struct BaseSpec {
  std::string_view name;
  int min_input;
  Preprocessing preprocessing;
};

BaseSpec spec_of(BaseArchitecture base) {
  switch (base) {
    case BaseArchitecture::Vgg16: return {"vgg16", 32, Preprocessing::Caffe};
    case BaseArchitecture::ResNet50V2: return {"resnet50v2", 32, Preprocessing::Tf};
    case BaseArchitecture::Xception: return {"xception", 71, Preprocessing::Tf};
  }
  throw UsageError("unknown base");
}

/// Tracks the running output shape while layers are appended to a base.
class BaseBuilder {
 public:
  BaseBuilder(int side, int divisor) : shape_{3, side, side}, divisor_(divisor) {}

  int width(int reference) const { return std::max(1, reference / divisor_); }
  const nn::Shape& shape() const { return shape_; }
  Sequential<float>& net() { return net_; }
  std::vector<BlockInfo>& blocks() { return blocks_; }

  template <typename L, typename... Args>
  void add(Args&&... args) {
    auto& layer = net_.emplace<L>(std::forward<Args>(args)...);
    shape_ = layer.output_shape(shape_);
  }

  void add_layer(std::unique_ptr<nn::Layer<float>> layer) {
    shape_ = layer->output_shape(shape_);
    net_.add(std::move(layer));
  }

  void begin_block() { block_start_ = net_.size(); }
  void end_block(std::string name) { blocks_.push_back({std::move(name), block_start_, net_.size()}); }

 private:
  nn::Shape shape_;
  int divisor_;
  Sequential<float> net_{"base"};
  std::vector<BlockInfo> blocks_;
  std::size_t block_start_ = 0;
};

Conv2d<float>::Options conv(int in, int out, int kernel, int stride, Padding pad, bool bias) {
  return {in, out, kernel, stride, pad, bias};
}

void build_vgg16(BaseBuilder& b) {
  constexpr std::array<int, 5> widths{64, 128, 256, 512, 512};
  constexpr std::array<int, 5> convs{2, 2, 3, 3, 3};
  int in = 3;
  for (int blk = 0; blk < 5; ++blk) {
    const std::string prefix = "block" + std::to_string(blk + 1);
    b.begin_block();
    const int out = b.width(widths[blk]);
    for (int i = 0; i < convs[blk]; ++i) {
      const std::string name = prefix + "_conv" + std::to_string(i + 1);
      b.add<Conv2d<float>>(name, conv(in, out, 3, 1, Padding::uniform(1), true));
      b.add<Relu<float>>(name + "_relu");
      in = out;
    }
    b.add<MaxPool2d<float>>(prefix + "_pool", 2, 2);
    b.end_block(prefix);
  }
}

// Pre-activation bottleneck unit of ResNet50V2.
std::unique_ptr<nn::Layer<float>> resnet_unit(const std::string& name, int in, int filters, int stride,
                                              bool conv_shortcut) {
  constexpr double kEps = 1.001e-5;
  const int out = 4 * filters;
  Sequential<float> branch(name + "_branch");
  if (!conv_shortcut) {
    branch.emplace<BatchNorm<float>>(name + "_preact_bn", in, kEps);
    branch.emplace<Relu<float>>(name + "_preact_relu");
  }
  branch.emplace<Conv2d<float>>(name + "_1_conv", conv(in, filters, 1, 1, {}, false));
  branch.emplace<BatchNorm<float>>(name + "_1_bn", filters, kEps);
  branch.emplace<Relu<float>>(name + "_1_relu");
  branch.emplace<Conv2d<float>>(name + "_2_conv", conv(filters, filters, 3, stride, Padding::uniform(1), false));
  branch.emplace<BatchNorm<float>>(name + "_2_bn", filters, kEps);
  branch.emplace<Relu<float>>(name + "_2_relu");
  branch.emplace<Conv2d<float>>(name + "_3_conv", conv(filters, out, 1, 1, {}, true));

  Sequential<float> shortcut(name + "_shortcut");
  if (conv_shortcut) {
    shortcut.emplace<Conv2d<float>>(name + "_0_conv", conv(in, out, 1, stride, {}, true));
    auto unit = std::make_unique<Sequential<float>>(name);
    unit->emplace<BatchNorm<float>>(name + "_preact_bn", in, kEps);
    unit->emplace<Relu<float>>(name + "_preact_relu");
    unit->add(std::make_unique<Residual<float>>(name + "_add", std::move(branch), std::move(shortcut)));
    return unit;
  }
  if (stride > 1) shortcut.emplace<MaxPool2d<float>>(name + "_0_pool", 1, stride);
  return std::make_unique<Residual<float>>(name, std::move(branch), std::move(shortcut));
}

void build_resnet50v2(BaseBuilder& b) {
  b.begin_block();
  const int stem = b.width(64);
  b.add<Conv2d<float>>("conv1_conv", conv(3, stem, 7, 2, Padding::uniform(3), true));
  b.add<MaxPool2d<float>>("pool1_pool", 3, 2, Padding::uniform(1), true);
  b.end_block("conv1");

  struct Stack {
    int filters;
    int units;
    int stride;
  };
  constexpr std::array<Stack, 4> stacks{{{64, 3, 2}, {128, 4, 2}, {256, 6, 2}, {512, 3, 1}}};
  int in = stem;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    const std::string stack = "conv" + std::to_string(s + 2);
    const int filters = b.width(stacks[s].filters);
    b.begin_block();
    for (int u = 0; u < stacks[s].units; ++u) {
      const bool last = u == stacks[s].units - 1;
      b.add_layer(resnet_unit(stack + "_block" + std::to_string(u + 1), in, filters,
                              last ? stacks[s].stride : 1, u == 0));
      in = 4 * filters;
    }
    if (s + 1 == stacks.size()) {
      b.add<BatchNorm<float>>("post_bn", in, 1.001e-5);
      b.add<Relu<float>>("post_relu");
    }
    b.end_block(stack);
  }
}

// Depthwise 3x3 (same padding) followed by a pointwise projection, no biases.
std::unique_ptr<nn::Layer<float>> separable(const std::string& name, int in, int out) {
  auto sep = std::make_unique<Sequential<float>>(name);
  sep->emplace<DepthwiseConv2d<float>>(name + "_depthwise", in, 3, 1, Padding::uniform(1));
  sep->emplace<Conv2d<float>>(name + "_pointwise", conv(in, out, 1, 1, {}, false));
  return sep;
}

// Xception entry/exit unit: strided 1x1 projection shortcut around
// [relu] sep bn relu sep bn maxpool.
std::unique_ptr<nn::Layer<float>> xception_down(const std::string& name, const nn::Shape& in_shape,
                                                int mid, int out, bool leading_relu) {
  const int in = in_shape.channels;
  Sequential<float> branch(name + "_branch");
  if (leading_relu) branch.emplace<Relu<float>>(name + "_sepconv1_act");
  branch.add(separable(name + "_sepconv1", in, mid));
  branch.emplace<BatchNorm<float>>(name + "_sepconv1_bn", mid);
  branch.emplace<Relu<float>>(name + "_sepconv2_act");
  branch.add(separable(name + "_sepconv2", mid, out));
  branch.emplace<BatchNorm<float>>(name + "_sepconv2_bn", out);
  branch.emplace<MaxPool2d<float>>(name + "_pool", 3, 2, Padding::same(in_shape.height, in_shape.width, 3, 2));

  Sequential<float> shortcut(name + "_shortcut");
  shortcut.emplace<Conv2d<float>>(name + "_residual_conv",
                                  conv(in, out, 1, 2, Padding::same(in_shape.height, in_shape.width, 1, 2), false));
  shortcut.emplace<BatchNorm<float>>(name + "_residual_bn", out);
  return std::make_unique<Residual<float>>(name, std::move(branch), std::move(shortcut));
}

void build_xception(BaseBuilder& b) {
  const int c32 = b.width(32), c64 = b.width(64), c128 = b.width(128), c256 = b.width(256);
  const int c728 = b.width(728), c1024 = b.width(1024), c1536 = b.width(1536), c2048 = b.width(2048);

  b.begin_block();
  b.add<Conv2d<float>>("block1_conv1", conv(3, c32, 3, 2, {}, false));
  b.add<BatchNorm<float>>("block1_conv1_bn", c32);
  b.add<Relu<float>>("block1_conv1_act");
  b.add<Conv2d<float>>("block1_conv2", conv(c32, c64, 3, 1, {}, false));
  b.add<BatchNorm<float>>("block1_conv2_bn", c64);
  b.add<Relu<float>>("block1_conv2_act");
  b.end_block("block1");

  const std::array<std::pair<int, bool>, 3> entry{{{c128, false}, {c256, true}, {c728, true}}};
  for (std::size_t i = 0; i < entry.size(); ++i) {
    const std::string name = "block" + std::to_string(i + 2);
    b.begin_block();
    b.add_layer(xception_down(name, b.shape(), entry[i].first, entry[i].first, entry[i].second));
    b.end_block(name);
  }

  for (int blk = 5; blk <= 12; ++blk) {
    const std::string name = "block" + std::to_string(blk);
    Sequential<float> branch(name + "_branch");
    for (int i = 1; i <= 3; ++i) {
      const std::string sep = name + "_sepconv" + std::to_string(i);
      branch.emplace<Relu<float>>(sep + "_act");
      branch.add(separable(sep, c728, c728));
      branch.emplace<BatchNorm<float>>(sep + "_bn", c728);
    }
    b.begin_block();
    b.add_layer(std::make_unique<Residual<float>>(name, std::move(branch)));
    b.end_block(name);
  }

  b.begin_block();
  b.add_layer(xception_down("block13", b.shape(), c728, c1024, true));
  b.end_block("block13");

  b.begin_block();
  b.add_layer(separable("block14_sepconv1", c1024, c1536));
  b.add<BatchNorm<float>>("block14_sepconv1_bn", c1536);
  b.add<Relu<float>>("block14_sepconv1_act");
  b.add_layer(separable("block14_sepconv2", c1536, c2048));
  b.add<BatchNorm<float>>("block14_sepconv2_bn", c2048);
  b.add<Relu<float>>("block14_sepconv2_act");
  b.end_block("block14");
}

struct Architecture {
  Sequential<float> base;
  std::vector<BlockInfo> blocks;
};

Architecture make_base(const ClassifierConfig& config) {
  BaseBuilder b(config.input_side, config.width_divisor);
  switch (config.base) {
    case BaseArchitecture::Vgg16: build_vgg16(b); break;
    case BaseArchitecture::ResNet50V2: build_resnet50v2(b); break;
    case BaseArchitecture::Xception: build_xception(b); break;
  }
  return {std::move(b.net()), std::move(b.blocks())};
}

/// Fixed pseudo-random RGB image used to calibrate normalisation statistics.
Image calibration_image(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xC0FFEEULL);
  Image image(side, side);
  for (auto& v : image.rgb) v = static_cast<std::uint8_t>(rng() & 0xFF);
  return image;
}

template <typename Rng>
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng() % i]);
  }
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate_cached(const ClassifierModel& model, std::size_t start,
                           const std::vector<nn::Tensor<float>>& inputs, std::span<const LabeledImage> data) {
  EvalResult r;
  const auto& net = model.network();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    nn::Tensor<float> out = net.forward(inputs[i], nullptr, start, net.size());
    Eigen::VectorXd scores = out.data().col(0).cast<double>();
    const int target = static_cast<int>(index_of(data[i].label));
    r.loss += nn::softmax_cross_entropy<float>(out.data(), target).loss;
    r.accuracy += prediction_from_scores(scores).label == data[i].label ? 1.0 : 0.0;
  }
  r.loss /= static_cast<double>(inputs.size());
  r.accuracy /= static_cast<double>(inputs.size());
  return r;
}

}  // namespace

std::string_view to_string(BaseArchitecture base) noexcept {
  switch (base) {
    case BaseArchitecture::Vgg16: return "vgg16";
    case BaseArchitecture::ResNet50V2: return "resnet50v2";
    case BaseArchitecture::Xception: return "xception";
  }
  return "unknown";
}

std::optional<BaseArchitecture> parse_base(std::string_view text) noexcept {
  for (auto base : {BaseArchitecture::Vgg16, BaseArchitecture::ResNet50V2, BaseArchitecture::Xception}) {
    if (to_string(base) == text) return base;
  }
  return std::nullopt;
}

std::string_view to_string(Preprocessing p) noexcept { return p == Preprocessing::Caffe ? "caffe" : "tf"; }

void validate_config(const ClassifierConfig& c) {
  if (c.num_classes != static_cast<int>(kNumEmotions)) throw UsageError("num_classes must be 4");
  if (c.head_widths[0] < 1 || c.head_widths[1] < 1) throw UsageError("head widths must be positive");
  if (c.epochs < 0) throw UsageError("epochs must be >= 0");
  if (c.batch_size < 1) throw UsageError("batch size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (c.width_divisor < 1) throw UsageError("width divisor must be >= 1");
  const auto spec = spec_of(c.base);
  if (c.input_side < spec.min_input) {
    throw ModelError("input " + std::to_string(c.input_side) + " below the " + std::string(spec.name) +
                     " minimum of " + std::to_string(spec.min_input));
  }
}

nlohmann::json config_json(const ClassifierConfig& c) {
  return {{"base", to_string(c.base)},
          {"input_side", c.input_side},
          {"head_widths", c.head_widths},
          {"num_classes", c.num_classes},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"width_divisor", c.width_divisor}};
}

ClassifierConfig config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  auto base = parse_base(j.at("base").get<std::string>());
  if (!base) throw ModelError("unknown base " + j.at("base").get<std::string>());
  c.base = *base;
  c.input_side = j.at("input_side").get<int>();
  c.head_widths = j.at("head_widths").get<std::array<int, 2>>();
  c.num_classes = j.at("num_classes").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.width_divisor = j.at("width_divisor").get<int>();
  return c;
}

Prediction prediction_from_scores(const Eigen::VectorXd& scores) {
  if (scores.size() != static_cast<Eigen::Index>(kNumEmotions)) {
    throw ModelError("expected 4 class scores");
  }
  const Eigen::VectorXd p = nn::softmax(scores);
  Prediction pred;
  std::size_t best = 0;
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    pred.probabilities[i] = p(static_cast<Eigen::Index>(i));
    if (scores(static_cast<Eigen::Index>(i)) > scores(static_cast<Eigen::Index>(best))) best = i;
  }
  pred.label = kEmotionLabels[best];
  return pred;
}

nn::Shape ClassifierModel::feature_shape() const {
  return network_.output_shape(input_shape(), 0, head_begin_);
}

std::size_t ClassifierModel::flattened_features() const {
  return static_cast<std::size_t>(feature_shape().size());
}

std::size_t ClassifierModel::head_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = head_begin_; i < network_.size(); ++i) n += network_.layer(i).parameter_count();
  return n;
}

std::size_t ClassifierModel::base_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < head_begin_; ++i) n += network_.layer(i).parameter_count();
  return n;
}

std::vector<std::string> ClassifierModel::trainable_parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < network_.size(); ++i) {
    if (!trainable_[i]) continue;
    for (const auto* p : network_.layer(i).parameters()) {
      if (p->learnable) names.push_back(p->name);
    }
  }
  return names;
}

std::vector<std::string> ClassifierModel::frozen_parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < network_.size(); ++i) {
    for (const auto* p : network_.layer(i).parameters()) {
      if (!trainable_[i] || !p->learnable) names.push_back(p->name);
    }
  }
  return names;
}

nn::Tensor<float> ClassifierModel::preprocess(const Image& image) const {
  if (image.width != config_.input_side || image.height != config_.input_side) {
    throw DataError("expected " + std::to_string(config_.input_side) + "x" + std::to_string(config_.input_side) +
                    " input, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  nn::Tensor<float> rgb = to_tensor<float>(image);
  if (preprocessing_ == Preprocessing::Tf) {
    rgb.data() = rgb.data().array() / 127.5f - 1.0f;
    return rgb;
  }
  nn::Tensor<float> bgr(rgb.shape(), nn::Matrix<float>(3, rgb.data().cols()));
  bgr.data().row(0) = rgb.data().row(2).array() - 103.939f;
  bgr.data().row(1) = rgb.data().row(1).array() - 116.779f;
  bgr.data().row(2) = rgb.data().row(0).array() - 123.68f;
  return bgr;
}

Eigen::VectorXd ClassifierModel::scores(const Image& image) const {
  return network_.forward(preprocess(image), nullptr).data().col(0).cast<double>();
}

ClassifierModel make_classifier(const ClassifierConfig& config, Sequential<float> base,
                                std::vector<BlockInfo> blocks, Preprocessing preprocessing) {
  validate_config(config);
  ClassifierModel model;
  model.config_ = config;
  model.preprocessing_ = preprocessing;
  model.blocks_ = std::move(blocks);

  const nn::Shape features = base.output_shape(model.input_shape());
  for (std::size_t i = 0; i < base.size(); ++i) model.network_.add(base.layer(i).clone());
  model.head_begin_ = model.network_.size();

  const int flat = static_cast<int>(features.size());
  model.network_.emplace<Flatten<float>>("flatten");
  model.network_.emplace<Dense<float>>("fc1", flat, config.head_widths[0]);
  model.network_.emplace<Relu<float>>("fc1_relu");
  model.network_.emplace<Dense<float>>("fc2", config.head_widths[0], config.head_widths[1]);
  model.network_.emplace<Relu<float>>("fc2_relu");
  model.network_.emplace<Dense<float>>("predictions", config.head_widths[1], config.num_classes);
  model.blocks_.push_back({"head", model.head_begin_, model.network_.size()});
  model.trainable_.assign(model.network_.size(), true);
  return model;
}

ClassifierModel build_classifier(const ClassifierConfig& config) {
  validate_config(config);
  auto arch = make_base(config);
  ClassifierModel model = make_classifier(config, std::move(arch.base), std::move(arch.blocks),
                                          spec_of(config.base).preprocessing);
  std::mt19937_64 rng(config.seed);
  nn::initialize(model.network(), rng);

  // Normalisation layers take their statistics from the calibration image;
  // bare convolutions are rescaled to unit output variance on it.
  nn::Tensor<float> x = model.preprocess(calibration_image(config.input_side, config.seed));
  for (std::size_t i = 0; i < model.head_begin(); ++i) {
    auto& layer = model.network().layer(i);
    x = layer.calibrate(x);
    if (auto* conv = dynamic_cast<Conv2d<float>*>(&layer)) {
      const auto& y = x.data().array();
      const double mean = y.mean();
      const double sd = std::sqrt(std::max((y - static_cast<float>(mean)).square().mean(), 1e-12f));
      conv->kernel().value /= static_cast<float>(sd);
      if (conv->options().bias) conv->bias().value /= static_cast<float>(sd);
      x.data() /= static_cast<float>(sd);
    }
  }
  return model;
}

void apply_freeze_policy(ClassifierModel& model) {
  if (model.blocks_.size() < 2) throw ModelError("base exposes no block structure");
  const BlockInfo& last_base_block = model.blocks_[model.blocks_.size() - 2];
  for (std::size_t i = 0; i < model.trainable_.size(); ++i) {
    model.trainable_[i] = i >= last_base_block.first;
  }
  model.freeze_applied_ = true;
}

TrainReport train_classifier(ClassifierModel& model, std::span<const LabeledImage> train,
                             std::span<const LabeledImage> val, const ClassifierConfig& config) {
  validate_config(config);
  if (config.input_side != model.config().input_side || config.base != model.config().base) {
    throw UsageError("training config does not match the model architecture");
  }
  if (train.empty()) throw DataError("empty training split");
  if (val.empty()) throw DataError("empty validation split");
  std::array<bool, kNumEmotions> present{};
  for (const auto& s : train) present[index_of(s.label)] = true;
  for (EmotionLabel label : kEmotionLabels) {
    if (!present[index_of(label)]) {
      throw DataError("class " + std::string(to_string(label)) + " absent from training data");
    }
  }
  for (const auto* split : {&train, &val}) {
    for (const auto& s : *split) model.preprocess(s.image);  // size check
  }

  TrainReport report;
  report.config = config_json(config);
  report.seed = config.seed;
  report.model_version = model.version_tag();
  if (config.epochs == 0) return report;

  const auto& trainable = model.trainable_layers();
  auto first = std::find(trainable.begin(), trainable.end(), true);
  if (first == trainable.end()) throw ModelError("model has no trainable layers");
  const auto start = static_cast<std::size_t>(first - trainable.begin());
  if (!std::all_of(first, trainable.end(), [](bool t) { return t; })) {
    throw ModelError("trainable layers must form a suffix of the network");
  }

  auto& net = model.network();
  auto cache = [&](std::span<const LabeledImage> data) {
    std::vector<nn::Tensor<float>> out;
    out.reserve(data.size());
    for (const auto& s : data) out.push_back(net.forward(model.preprocess(s.image), nullptr, 0, start));
    return out;
  };
  const auto train_inputs = cache(train);
  const auto val_inputs = cache(val);

  auto params = net.parameters_of(start, net.size());
  nn::Adam<float> adam(params, {.learning_rate = config.learning_rate});
  auto grads = nn::zero_gradients(params);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      for (auto& g : grads) g.setZero();
      for (std::size_t i = b; i < end; ++i) {
        const std::size_t s = order[i];
        nn::Context<float> ctx;
        nn::Tensor<float> out = net.forward(train_inputs[s], &ctx, start, net.size());
        auto lg = nn::softmax_cross_entropy<float>(out.data(), static_cast<int>(index_of(train[s].label)));
        net.backward(nn::Tensor<float>(out.shape(), std::move(lg.grad)), ctx, grads, start, net.size());
      }
      adam.step(grads, 1.0 / static_cast<double>(end - b));
    }

    const EvalResult tr = evaluate_cached(model, start, train_inputs, train);
    const EvalResult va = evaluate_cached(model, start, val_inputs, val);
    report.epochs.push_back({epoch, tr.accuracy, va.accuracy, tr.loss, va.loss});
  }
  return report;
}

Prediction predict(const ClassifierModel& model, const Image& roi) {
  return prediction_from_scores(model.scores(roi));
}

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path) {
  nlohmann::json header = {{"kind", kArtifactKind},
                           {"version_tag", model.version_tag()},
                           {"config", config_json(model.config())},
                           {"preprocessing", to_string(model.preprocessing())},
                           {"trainable_layers", model.trainable_layers()},
                           {"freeze_applied", model.freeze_applied()}};
  nn::write_archive(path, std::move(header), model.network().parameters());
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  const auto header = nn::read_archive_header(path);
  if (header.json.value("kind", "") != kArtifactKind) {
    throw ModelError(path.string() + ": not a classifier model");
  }
  ClassifierConfig config;
  try {
    config = config_from_json(header.json.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(path.string() + ": bad classifier config: " + e.what());
  }
  auto arch = make_base(config);
  ClassifierModel model = make_classifier(config, std::move(arch.base), std::move(arch.blocks),
                                          spec_of(config.base).preprocessing);
  const auto full = nn::read_archive(path, model.network().parameters(), kArtifactKind);
  model.version_tag_ = full.json.value("version_tag", "v1");
  const std::string pre = full.json.value("preprocessing", "");
  if (pre != to_string(model.preprocessing_)) {
    throw ModelError(path.string() + ": preprocessing '" + pre + "' does not match base");
  }
  auto mask = full.json.at("trainable_layers").get<std::vector<bool>>();
  if (mask.size() != model.network_.size()) throw ModelError(path.string() + ": bad trainable mask");
  model.trainable_ = std::move(mask);
  model.freeze_applied_ = full.json.value("freeze_applied", false);
  return model;
}

}  // namespace equine

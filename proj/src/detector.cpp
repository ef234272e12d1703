#include "equine/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "equine/error.hpp"
#include "equine/nn/adam.hpp"
#include "equine/nn/archive.hpp"
#include "equine/nn/loss.hpp"

namespace equine {

using nn::Conv2d;
using nn::Dense;
using nn::Matrix;
using nn::MaxPool2d;
using nn::Padding;
using nn::Relu;
using nn::Tensor;

namespace {

constexpr const char* kArtifactKind = "detector";
constexpr int kStride = 16;
constexpr int kPool = 4;
constexpr std::array<int, 4> kBackboneWidths{8, 16, 32, 64};
constexpr int kRpnWidth = 64;
constexpr int kHeadWidth = 128;
constexpr std::array<double, 4> kHeadDeltaStd{0.1, 0.1, 0.2, 0.2};
constexpr double kRpnBeta = 1.0 / 9.0;
constexpr double kMaxLogScale = 4.135;  // log(1000 / 16)
constexpr double kPriorBias = -4.595;   // sigmoid = 0.01

/// Continuous corner-form box used inside the network.
struct FBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
};

FBox to_fbox(const BoundingBox& b) { return {double(b.x), double(b.y), double(b.right()), double(b.bottom())}; }

double fiou(const FBox& a, const FBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w() * a.h() + b.w() * b.h() - inter);
}

FBox clip(FBox b, int width, int height) {
  b.x1 = std::clamp(b.x1, 0.0, double(width));
  b.x2 = std::clamp(b.x2, 0.0, double(width));
  b.y1 = std::clamp(b.y1, 0.0, double(height));
  b.y2 = std::clamp(b.y2, 0.0, double(height));
  return b;
}

std::array<double, 4> encode(const FBox& a, const FBox& g) {
  return {((g.x1 + g.x2) - (a.x1 + a.x2)) / 2.0 / a.w(), ((g.y1 + g.y2) - (a.y1 + a.y2)) / 2.0 / a.h(),
          std::log(g.w() / a.w()), std::log(g.h() / a.h())};
}

FBox decode(const FBox& a, const std::array<double, 4>& d) {
  const double cx = (a.x1 + a.x2) / 2.0 + d[0] * a.w();
  const double cy = (a.y1 + a.y2) / 2.0 + d[1] * a.h();
  const double w = a.w() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = a.h() * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
}

/// Integer box covering [x1, x2) x [y1, y2) after round-half-up, at least 1 px.
BoundingBox to_pixels(const FBox& b, int width, int height) {
  int x1 = std::clamp(round_half_up(b.x1), 0, width - 1);
  int y1 = std::clamp(round_half_up(b.y1), 0, height - 1);
  int x2 = std::clamp(round_half_up(b.x2), x1 + 1, width);
  int y2 = std::clamp(round_half_up(b.y2), y1 + 1, height);
  return {x1, y1, x2 - x1, y2 - y1};
}

/// Anchors for a feature map, indexed pixel-major: index = p * A + a.
std::vector<FBox> make_anchors(const DetectorConfig& cfg, int fh, int fw) {
  std::vector<FBox> anchors;
  anchors.reserve(static_cast<std::size_t>(fh) * fw * cfg.anchor_scales.size() * cfg.anchor_ratios.size());
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      const double cx = (x + 0.5) * kStride;
      const double cy = (y + 0.5) * kStride;
      for (double s : cfg.anchor_scales) {
        for (double r : cfg.anchor_ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
      }
    }
  }
  return anchors;
}

struct Proposal {
  FBox box;
  double score;
};

std::vector<std::size_t> greedy_nms(const std::vector<FBox>& boxes, const std::vector<std::size_t>& order,
                                    double threshold, std::size_t limit) {
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    if (keep.size() >= limit) break;
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (fiou(boxes[i], boxes[k]) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

struct PooledRois {
  Matrix<float> features;  // (C * kPool * kPool) x N
  std::vector<Eigen::Index> argmax;
};

}  // namespace

void validate_config(const DetectorConfig& c) {
  if (c.anchor_scales.empty() || c.anchor_ratios.empty()) throw UsageError("anchor lists must be nonempty");
  for (double v : c.anchor_scales) {
    if (!(v > 0)) throw UsageError("anchor scales must be positive");
  }
  for (double v : c.anchor_ratios) {
    if (!(v > 0)) throw UsageError("anchor ratios must be positive");
  }
  if (!(c.proposal_nms_iou > 0 && c.proposal_nms_iou < 1)) throw UsageError("proposal_nms_iou must be in (0,1)");
  if (!(c.score_threshold >= 0 && c.score_threshold <= 1)) throw UsageError("score_threshold must be in [0,1]");
  if (c.epochs < 0) throw UsageError("epochs must be >= 0");
  if (c.input_height < kStride) throw UsageError("input height too small");
  if (!(c.learning_rate > 0)) throw UsageError("learning rate must be positive");
  if (c.pre_nms_top_n < 1 || c.post_nms_top_n < 1 || c.rpn_batch < 1 || c.roi_batch < 1) {
    throw UsageError("sampling sizes must be positive");
  }
}

nlohmann::json config_json(const DetectorConfig& c) {
  return {{"anchor_scales", c.anchor_scales},   {"anchor_ratios", c.anchor_ratios},
          {"proposal_nms_iou", c.proposal_nms_iou}, {"score_threshold", c.score_threshold},
          {"epochs", c.epochs},                 {"input_height", c.input_height},
          {"learning_rate", c.learning_rate},   {"pre_nms_top_n", c.pre_nms_top_n},
          {"post_nms_top_n", c.post_nms_top_n}, {"rpn_batch", c.rpn_batch},
          {"roi_batch", c.roi_batch},           {"seed", c.seed}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
  c.anchor_ratios = j.at("anchor_ratios").get<std::vector<double>>();
  c.proposal_nms_iou = j.at("proposal_nms_iou").get<double>();
  c.score_threshold = j.at("score_threshold").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.input_height = j.at("input_height").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.pre_nms_top_n = j.at("pre_nms_top_n").get<int>();
  c.post_nms_top_n = j.at("post_nms_top_n").get<int>();
  c.rpn_batch = j.at("rpn_batch").get<int>();
  c.roi_batch = j.at("roi_batch").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

DetectorModel::DetectorModel(DetectorConfig config) : config_(std::move(config)) {
  validate_config(config_);
  int in = 3;
  for (std::size_t i = 0; i < kBackboneWidths.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    backbone_.emplace<Conv2d<float>>(name, Conv2d<float>::Options{in, kBackboneWidths[i], 3, 1, Padding::uniform(1), true});
    backbone_.emplace<Relu<float>>(name + "_relu");
    backbone_.emplace<MaxPool2d<float>>(name + "_pool", 2, 2);
    in = kBackboneWidths[i];
  }
  rpn_conv_.emplace<Conv2d<float>>("rpn_conv", Conv2d<float>::Options{in, kRpnWidth, 3, 1, Padding::uniform(1), true});
  rpn_conv_.emplace<Relu<float>>("rpn_relu");
  const int anchors = static_cast<int>(config_.anchor_scales.size() * config_.anchor_ratios.size());
  rpn_cls_ = std::make_unique<Conv2d<float>>("rpn_cls", Conv2d<float>::Options{kRpnWidth, anchors, 1, 1, {}, true});
  rpn_bbox_ = std::make_unique<Conv2d<float>>("rpn_bbox", Conv2d<float>::Options{kRpnWidth, 4 * anchors, 1, 1, {}, true});
  head_.emplace<Dense<float>>("fc1", in * kPool * kPool, kHeadWidth);
  head_.emplace<Relu<float>>("fc1_relu");
  head_.emplace<Dense<float>>("fc2", kHeadWidth, 5);
}

DetectorModel::DetectorModel(const DetectorModel& o)
    : config_(o.config_),
      version_tag_(o.version_tag_),
      backbone_(o.backbone_),
      rpn_conv_(o.rpn_conv_),
      rpn_cls_(std::make_unique<Conv2d<float>>(*o.rpn_cls_)),
      rpn_bbox_(std::make_unique<Conv2d<float>>(*o.rpn_bbox_)),
      head_(o.head_) {}

DetectorModel& DetectorModel::operator=(const DetectorModel& o) {
  if (this != &o) *this = DetectorModel(o);
  return *this;
}

std::vector<nn::Parameter<float>*> DetectorModel::parameters() {
  std::vector<nn::Parameter<float>*> out;
  for (nn::Layer<float>* l : std::initializer_list<nn::Layer<float>*>{&backbone_, &rpn_conv_, rpn_cls_.get(),
                                                                     rpn_bbox_.get(), &head_}) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const nn::Parameter<float>*> DetectorModel::parameters() const {
  auto p = const_cast<DetectorModel*>(this)->parameters();
  return {p.begin(), p.end()};
}

/// Forward and backward passes over a DetectorModel's parts.
struct DetectorNet {
  struct Pass {
    int width = 0;
    int height = 0;
    Tensor<float> features;
    Tensor<float> logits;
    Tensor<float> deltas;
    std::vector<FBox> anchors;
    nn::Context<float> backbone, rpn, cls, bbox;
  };

  static Tensor<float> normalize(const Image& image) {
    Tensor<float> x = to_tensor<float>(image);
    x.data() = (x.data().array() / 255.0f - 0.5f) / 0.25f;
    return x;
  }

  static Pass run_rpn(const DetectorModel& m, const Image& image, bool train) {
    Pass p;
    p.width = image.width;
    p.height = image.height;
    p.features = m.backbone_.forward(normalize(image), train ? &p.backbone : nullptr);
    if (p.features.height() < 1 || p.features.width() < 1) throw DataError("image too small for the detector");
    Tensor<float> hidden = m.rpn_conv_.forward(p.features, train ? &p.rpn : nullptr);
    p.logits = m.rpn_cls_->forward(hidden, train ? &p.cls : nullptr);
    p.deltas = m.rpn_bbox_->forward(hidden, train ? &p.bbox : nullptr);
    p.anchors = make_anchors(m.config_, p.features.height(), p.features.width());
    return p;
  }

  static int anchors_per_cell(const Pass& p) { return p.logits.channels(); }

  static std::array<double, 4> rpn_delta(const Pass& p, std::size_t i) {
    const int A = anchors_per_cell(p);
    const Eigen::Index px = static_cast<Eigen::Index>(i / A);
    const int a = static_cast<int>(i % A);
    return {p.deltas.data()(4 * a, px), p.deltas.data()(4 * a + 1, px), p.deltas.data()(4 * a + 2, px),
            p.deltas.data()(4 * a + 3, px)};
  }

  static double rpn_logit(const Pass& p, std::size_t i) {
    const int A = anchors_per_cell(p);
    return p.logits.data()(static_cast<Eigen::Index>(i % A), static_cast<Eigen::Index>(i / A));
  }

  static std::vector<FBox> proposals(const DetectorModel& m, const Pass& p) {
    std::vector<FBox> boxes(p.anchors.size());
    std::vector<double> scores(p.anchors.size());
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < p.anchors.size(); ++i) {
      boxes[i] = clip(decode(p.anchors[i], rpn_delta(p, i)), p.width, p.height);
      scores[i] = rpn_logit(p, i);
      if (boxes[i].w() >= 1.0 && boxes[i].h() >= 1.0) order.push_back(i);
    }
    const std::size_t top = std::min(order.size(), static_cast<std::size_t>(m.config_.pre_nms_top_n));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
    order.resize(top);
    const auto keep = greedy_nms(boxes, order, m.config_.proposal_nms_iou,
                                 static_cast<std::size_t>(m.config_.post_nms_top_n));
    std::vector<FBox> out;
    out.reserve(keep.size());
    for (std::size_t k : keep) out.push_back(boxes[k]);
    return out;
  }

  static PooledRois roi_pool(const Tensor<float>& f, const std::vector<FBox>& rois) {
    const int C = f.channels();
    PooledRois out;
    out.features.resize(static_cast<Eigen::Index>(C) * kPool * kPool, static_cast<Eigen::Index>(rois.size()));
    out.argmax.resize(static_cast<std::size_t>(out.features.size()));
    auto span_of = [](double lo, double hi, int extent) {
      int a = std::clamp(static_cast<int>(std::floor(lo / kStride)), 0, extent - 1);
      int b = std::clamp(static_cast<int>(std::ceil(hi / kStride)) - 1, a, extent - 1);
      return std::pair{a, b - a + 1};
    };
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const auto [x0, rw] = span_of(rois[r].x1, rois[r].x2, f.width());
      const auto [y0, rh] = span_of(rois[r].y1, rois[r].y2, f.height());
      for (int by = 0; by < kPool; ++by) {
        const int ys = y0 + by * rh / kPool;
        const int ye = std::max(ys + 1, y0 + ((by + 1) * rh + kPool - 1) / kPool);
        for (int bx = 0; bx < kPool; ++bx) {
          const int xs = x0 + bx * rw / kPool;
          const int xe = std::max(xs + 1, x0 + ((bx + 1) * rw + kPool - 1) / kPool);
          for (int c = 0; c < C; ++c) {
            float best = -std::numeric_limits<float>::infinity();
            Eigen::Index best_idx = 0;
            for (int y = ys; y < ye; ++y) {
              for (int x = xs; x < xe; ++x) {
                const Eigen::Index idx = c + static_cast<Eigen::Index>(y * f.width() + x) * C;
                if (f.data().data()[idx] > best) {
                  best = f.data().data()[idx];
                  best_idx = idx;
                }
              }
            }
            const Eigen::Index row = static_cast<Eigen::Index>(by * kPool + bx) * C + c;
            out.features(row, static_cast<Eigen::Index>(r)) = best;
            out.argmax[static_cast<std::size_t>(row + static_cast<Eigen::Index>(r) * out.features.rows())] = best_idx;
          }
        }
      }
    }
    return out;
  }

  static Tensor<float> head_forward(const DetectorModel& m, const PooledRois& pooled, nn::Context<float>* ctx) {
    Tensor<float> x(nn::Shape{static_cast<int>(pooled.features.rows()), 1, static_cast<int>(pooled.features.cols())},
                    pooled.features);
    return m.head_.forward(x, ctx);
  }

  static std::array<double, 4> head_delta(const Tensor<float>& out, Eigen::Index r) {
    std::array<double, 4> d;
    for (int k = 0; k < 4; ++k) d[k] = out.data()(k + 1, r) * kHeadDeltaStd[k];
    return d;
  }

  static void initialize(DetectorModel& m, std::mt19937_64& rng) {
    nn::initialize(m.backbone_, rng);
    nn::initialize(m.rpn_conv_, rng);
    nn::fill_normal(m.rpn_cls_->kernel().value, 0.01, rng);
    nn::fill_normal(m.rpn_bbox_->kernel().value, 0.01, rng);
    nn::initialize(m.head_.layer(0), rng);
    auto& fc2 = dynamic_cast<Dense<float>&>(m.head_.layer(2));
    nn::fill_normal(fc2.weight().value, 0.01, rng);
    fc2.weight().value.bottomRows(4) *= 0.1f;
    fc2.bias().value.setZero();
    fc2.bias().value(0, 0) = static_cast<float>(kPriorBias);
  }

  /// One training step's loss and gradients for a single image.
  static double step(const DetectorModel& m, const DetectorSample& s, std::mt19937_64& rng,
                     std::vector<Matrix<float>>& grads) {
    const DetectorConfig& cfg = m.config_;
    Pass p = run_rpn(m, s.image, true);
    const FBox gt = to_fbox(s.box);
    const std::size_t n_anchors = p.anchors.size();

    // Anchor labels: 1 positive, 0 negative, -1 ignored.
    std::vector<double> overlap(n_anchors);
    std::vector<int> label(n_anchors, -1);
    std::size_t best = 0;
    for (std::size_t i = 0; i < n_anchors; ++i) {
      overlap[i] = fiou(p.anchors[i], gt);
      if (overlap[i] > overlap[best]) best = i;
      if (overlap[i] >= 0.7) {
        label[i] = 1;
      } else if (overlap[i] < 0.3) {
        label[i] = 0;
      }
    }
    for (std::size_t i = 0; i < n_anchors; ++i) {
      if (overlap[i] == overlap[best] && overlap[best] > 0) label[i] = 1;
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n_anchors; ++i) {
      if (label[i] == 1) pos.push_back(i);
      if (label[i] == 0) neg.push_back(i);
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    pos.resize(std::min(pos.size(), static_cast<std::size_t>(cfg.rpn_batch / 2)));
    neg.resize(std::min(neg.size(), static_cast<std::size_t>(cfg.rpn_batch) - pos.size()));

    const int A = anchors_per_cell(p);
    Matrix<float> d_logits = Matrix<float>::Zero(p.logits.data().rows(), p.logits.data().cols());
    Matrix<float> d_deltas = Matrix<float>::Zero(p.deltas.data().rows(), p.deltas.data().cols());
    const double rpn_norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, pos.size() + neg.size()));
    double loss = 0.0;
    auto add_cls = [&](std::size_t i, double target) {
      const auto [l, g] = nn::sigmoid_cross_entropy(rpn_logit(p, i), target);
      loss += l * rpn_norm;
      d_logits(static_cast<Eigen::Index>(i % A), static_cast<Eigen::Index>(i / A)) += static_cast<float>(g * rpn_norm);
    };
    for (std::size_t i : pos) {
      add_cls(i, 1.0);
      const auto target = encode(p.anchors[i], gt);
      const auto pred = rpn_delta(p, i);
      for (int k = 0; k < 4; ++k) {
        const auto [l, g] = nn::smooth_l1(pred[k] - target[k], kRpnBeta);
        loss += l * rpn_norm;
        d_deltas(static_cast<Eigen::Index>(4 * (i % A) + k), static_cast<Eigen::Index>(i / A)) +=
            static_cast<float>(g * rpn_norm);
      }
    }
    for (std::size_t i : neg) add_cls(i, 0.0);

    // Region head on sampled proposals plus the ground truth.
    std::vector<FBox> props = proposals(m, p);
    props.push_back(gt);
    std::vector<std::size_t> fg, bg;
    for (std::size_t i = 0; i < props.size(); ++i) (fiou(props[i], gt) >= 0.5 ? fg : bg).push_back(i);
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    fg.resize(std::min(fg.size(), static_cast<std::size_t>(std::max(1, cfg.roi_batch / 4))));
    bg.resize(std::min(bg.size(), static_cast<std::size_t>(cfg.roi_batch) - fg.size()));
    std::vector<FBox> rois;
    for (std::size_t i : fg) rois.push_back(props[i]);
    for (std::size_t i : bg) rois.push_back(props[i]);

    const PooledRois pooled = roi_pool(p.features, rois);
    nn::Context<float> head_ctx;
    Tensor<float> out = head_forward(m, pooled, &head_ctx);
    Matrix<float> d_out = Matrix<float>::Zero(out.data().rows(), out.data().cols());
    const double roi_norm = 1.0 / static_cast<double>(rois.size());
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const auto col = static_cast<Eigen::Index>(r);
      const bool is_fg = r < fg.size();
      const auto [l, g] = nn::sigmoid_cross_entropy(out.data()(0, col), is_fg ? 1.0 : 0.0);
      loss += l * roi_norm;
      d_out(0, col) = static_cast<float>(g * roi_norm);
      if (!is_fg) continue;
      const auto target = encode(rois[r], gt);
      for (int k = 0; k < 4; ++k) {
        const auto [lr, gr] = nn::smooth_l1(out.data()(k + 1, col) - target[k] / kHeadDeltaStd[k], 1.0);
        loss += lr * roi_norm;
        d_out(k + 1, col) = static_cast<float>(gr * roi_norm);
      }
    }

    // Backward, parameter blocks in DetectorModel::parameters() order.
    const std::size_t nb = m.backbone_.parameters().size();
    const std::size_t nr = m.rpn_conv_.parameters().size();
    nn::GradSpan<float> all(grads);
    auto g_backbone = all.subspan(0, nb);
    auto g_rpn = all.subspan(nb, nr);
    auto g_cls = all.subspan(nb + nr, 2);
    auto g_bbox = all.subspan(nb + nr + 2, 2);
    auto g_head = all.subspan(nb + nr + 4);

    Tensor<float> d_pooled = m.head_.backward(Tensor<float>(out.shape(), std::move(d_out)), head_ctx, g_head);
    Matrix<float> d_features = Matrix<float>::Zero(p.features.data().rows(), p.features.data().cols());
    for (Eigen::Index i = 0; i < d_pooled.data().size(); ++i) {
      d_features.data()[pooled.argmax[static_cast<std::size_t>(i)]] += d_pooled.data().data()[i];
    }
    Tensor<float> d_hidden = m.rpn_cls_->backward(Tensor<float>(p.logits.shape(), std::move(d_logits)), p.cls, g_cls);
    d_hidden.data() += m.rpn_bbox_->backward(Tensor<float>(p.deltas.shape(), std::move(d_deltas)), p.bbox, g_bbox).data();
    d_features += m.rpn_conv_.backward(d_hidden, p.rpn, g_rpn).data();
    m.backbone_.backward(Tensor<float>(p.features.shape(), std::move(d_features)), p.backbone, g_backbone);
    return loss;
  }

  static std::vector<Detection> infer(const DetectorModel& m, const Image& image) {
    const Pass p = run_rpn(m, image, false);
    const std::vector<FBox> props = proposals(m, p);
    if (props.empty()) return {};
    const Tensor<float> out = head_forward(m, roi_pool(p.features, props), nullptr);
    std::vector<Detection> dets;
    for (std::size_t r = 0; r < props.size(); ++r) {
      const auto col = static_cast<Eigen::Index>(r);
      const double score = nn::sigmoid(out.data()(0, col));
      if (score < m.config_.score_threshold) continue;
      const FBox box = clip(decode(props[r], head_delta(out, col)), p.width, p.height);
      dets.push_back({to_pixels(box, p.width, p.height), score});
    }
    return nms(std::move(dets), m.config_.proposal_nms_iou);
  }
};

DetectorTraining train_detector(std::span<const DetectorSample> train, const DetectorConfig& config) {
  validate_config(config);
  if (train.empty()) throw DataError("empty training set");
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    if (s.image.height != config.input_height) {
      throw DataError("training image " + std::to_string(i) + ": expected height " +
                      std::to_string(config.input_height) + ", got " + std::to_string(s.image.height));
    }
    if (s.box.x < 0 || s.box.y < 0 || s.box.w < 1 || s.box.h < 1 || s.box.right() > s.image.width ||
        s.box.bottom() > s.image.height) {
      throw DataError("training image " + std::to_string(i) + ": invalid box");
    }
  }

  DetectorTraining result{DetectorModel(config), {}};
  DetectorModel& model = result.model;
  std::mt19937_64 rng(config.seed);
  DetectorNet::initialize(model, rng);

  auto params = model.parameters();
  nn::Adam<float> adam(params, {.learning_rate = config.learning_rate});
  auto grads = nn::zero_gradients(params);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      for (auto& g : grads) g.setZero();
      total += DetectorNet::step(model, train[i], rng, grads);
      adam.step(grads);
    }
    result.loss_curve.push_back(total / static_cast<double>(train.size()));
  }
  return result;
}

std::vector<Detection> detect(const DetectorModel& model, const Image& image) {
  if (image.height != model.config().input_height) {
    throw DataError("expected height " + std::to_string(model.config().input_height) + ", got " +
                    std::to_string(image.height));
  }
  if (image.width < kStride) throw DataError("image too narrow for the detector");
  return DetectorNet::infer(model, image);
}

std::optional<Detection> best_roi(std::span<const Detection> detections) {
  if (detections.empty()) return std::nullopt;
  return *std::min_element(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::pair{a.box.x, a.box.y} < std::pair{b.box.x, b.box.y};
  });
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::pair{a.box.x, a.box.y} < std::pair{b.box.x, b.box.y};
  });
  std::vector<Detection> keep;
  for (const auto& d : detections) {
    const bool suppressed = std::any_of(keep.begin(), keep.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) keep.push_back(d);
  }
  return keep;
}

DetectorEvaluation evaluate_detector(const DetectorModel& model, std::span<const DetectorSample> val,
                                     double iou_threshold) {
  if (val.empty()) throw DataError("empty validation set");
  DetectorEvaluation ev;
  std::size_t detected = 0;
  std::size_t correct = 0;
  for (const auto& s : val) {
    DetectorImageResult r;
    const auto dets = detect(model, s.image);
    r.best = best_roi(dets);
    if (r.best) {
      ++detected;
      r.iou = iou(r.best->box, s.box);
      r.correct = r.iou >= iou_threshold;
      if (r.correct) ++correct;
    }
    ev.per_image.push_back(r);
  }
  if (detected > 0) ev.precision = static_cast<double>(correct) / static_cast<double>(detected);
  ev.recall = static_cast<double>(correct) / static_cast<double>(val.size());
  return ev;
}

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"kind", kArtifactKind}, {"version_tag", model.version_tag()}, {"config", config_json(model.config())}};
  nn::write_archive(path, std::move(header), model.parameters());
}

DetectorModel load_detector(const std::filesystem::path& path) {
  const auto header = nn::read_archive_header(path);
  if (header.json.value("kind", "") != kArtifactKind) throw ModelError(path.string() + ": not a detector model");
  DetectorConfig config;
  try {
    config = detector_config_from_json(header.json.at("config"));
    validate_config(config);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(path.string() + ": bad detector config: " + e.what());
  } catch (const UsageError& e) {
    throw ModelError(path.string() + ": bad detector config: " + e.what());
  }
  DetectorModel model(config);
  const auto full = nn::read_archive(path, model.parameters(), kArtifactKind);
  model.set_version_tag(full.json.value("version_tag", "v1"));
  return model;
}

std::string format_loss_curve(std::span<const double> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
  return out.str();
}

}  // namespace equine

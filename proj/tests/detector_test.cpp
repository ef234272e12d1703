#include <gtest/gtest.h>

#include <algorithm>

#include "equine/detector.hpp"
#include "equine/error.hpp"
#include "equine/nn/archive.hpp"
#include "test_support.hpp"

namespace equine {
namespace {

DetectorConfig untrained_config() {
  DetectorConfig c;
  c.epochs = 0;
  c.seed = 4;
  return c;
}

void expect_valid_output(const std::vector<Detection>& dets, const DetectorConfig& cfg, int width, int height) {
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_GE(dets[i].score, cfg.score_threshold);
    EXPECT_LE(dets[i].score, 1.0);
    EXPECT_GE(dets[i].box.x, 0);
    EXPECT_GE(dets[i].box.y, 0);
    EXPECT_LE(dets[i].box.right(), width);
    EXPECT_LE(dets[i].box.bottom(), height);
    if (i > 0) EXPECT_GE(dets[i - 1].score, dets[i].score);
    for (std::size_t j = 0; j < i; ++j) EXPECT_LE(iou(dets[i].box, dets[j].box), cfg.proposal_nms_iou);
  }
}

TEST(BestRoi, Examples) {
  EXPECT_FALSE(best_roi({}));
  const std::vector<Detection> two{{{0, 0, 5, 5}, 0.4}, {{9, 9, 5, 5}, 0.9}};
  EXPECT_EQ(best_roi(two)->score, 0.9);
  const std::vector<Detection> tied{{{5, 0, 5, 5}, 0.8}, {{3, 7, 5, 5}, 0.8}, {{3, 9, 5, 5}, 0.8}};
  EXPECT_EQ(best_roi(tied)->box, (BoundingBox{3, 7, 5, 5}));
}

TEST(Nms, SuppressesOverlapsAndSorts) {
  std::vector<Detection> dets{{{0, 0, 10, 10}, 0.6}, {{1, 1, 10, 10}, 0.9}, {{50, 50, 10, 10}, 0.7}, {{2, 0, 10, 10}, 0.5}};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_EQ(kept[1].score, 0.7);
  // Brute force: every input box is either kept or overlaps a higher-scored kept box.
  for (const auto& d : dets) {
    const bool kept_it = std::find(kept.begin(), kept.end(), d) != kept.end();
    bool covered = false;
    for (const auto& k : kept) covered |= k.score > d.score && iou(k.box, d.box) > 0.5;
    EXPECT_TRUE(kept_it != covered);
  }
}

TEST(Detector, ZeroEpochsGivesEmptyCurve) {
  const auto samples = testing::toy_detector_samples(2, 1);
  const auto t = train_detector(samples, untrained_config());
  EXPECT_TRUE(t.loss_curve.empty());
}

TEST(Detector, UntrainedOnUniformImageFindsNothing) {
  const auto samples = testing::toy_detector_samples(1, 1);
  const auto t = train_detector(samples, untrained_config());
  const auto dets = detect(t.model, make_uniform_image(300, 200, 128, 128, 128));
  expect_valid_output(dets, t.model.config(), 300, 200);
  EXPECT_TRUE(dets.empty());
}

TEST(Detector, InputErrors) {
  const auto samples = testing::toy_detector_samples(1, 1);
  const auto t = train_detector(samples, untrained_config());
  try {
    detect(t.model, Image(300, 300));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("expected height 200"), std::string::npos);
  }
  try {
    train_detector({}, untrained_config());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()), "empty training set");
  }
  auto bad = samples;
  bad[0].box = {290, 10, 50, 50};
  EXPECT_THROW(train_detector(bad, untrained_config()), DataError);
  auto tall = samples;
  tall[0].image = Image(300, 240);
  EXPECT_THROW(train_detector(tall, untrained_config()), DataError);
  EXPECT_THROW(evaluate_detector(t.model, {}), DataError);
}

TEST(Detector, ConfigValidation) {
  DetectorConfig c;
  c.anchor_scales.clear();
  EXPECT_THROW(validate_config(c), UsageError);
  c = {};
  c.proposal_nms_iou = 1.0;
  EXPECT_THROW(validate_config(c), UsageError);
  c = {};
  c.score_threshold = 1.5;
  EXPECT_THROW(validate_config(c), UsageError);
  const DetectorConfig d;
  EXPECT_EQ(d.anchor_scales, (std::vector<double>{32, 64, 128}));
  EXPECT_EQ(d.anchor_ratios, (std::vector<double>{0.5, 1, 2}));
  EXPECT_EQ(d.proposal_nms_iou, 0.7);
  EXPECT_EQ(d.score_threshold, 0.5);
  EXPECT_EQ(d.epochs, 4000);
  EXPECT_EQ(config_json(detector_config_from_json(config_json(d))), config_json(d));
}

TEST(Detector, NoDetectionsMeansNoPrecision) {
  const auto samples = testing::toy_detector_samples(3, 2);
  const auto t = train_detector(samples, untrained_config());
  const auto ev = evaluate_detector(t.model, samples);
  EXPECT_FALSE(ev.precision.has_value());
  EXPECT_EQ(ev.recall, 0.0);
  ASSERT_EQ(ev.per_image.size(), 3u);
  EXPECT_FALSE(ev.per_image[0].best);
}

TEST(Detector, LossCurveCsv) {
  const std::vector<double> curve{1.5, 0.25};
  EXPECT_EQ(format_loss_curve(curve), "epoch,loss\n1,1.5\n2,0.25\n");
}

// One training run shared by every check on the trained model.
TEST(Detector, ToyOverfit) {
  const auto samples = testing::toy_detector_samples(10, 11);
  DetectorConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 1;
  const auto t = train_detector(samples, cfg);
  ASSERT_EQ(t.loss_curve.size(), 200u);
  EXPECT_LT(t.loss_curve.back(), t.loss_curve.front());

  const auto ev = evaluate_detector(t.model, samples, 0.5);
  ASSERT_TRUE(ev.precision.has_value());
  EXPECT_EQ(*ev.precision, 1.0);
  EXPECT_EQ(ev.recall, 1.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ASSERT_TRUE(ev.per_image[i].best);
    EXPECT_NEAR(ev.per_image[i].iou, testing::pixel_iou(ev.per_image[i].best->box, samples[i].box), 1e-12);
    EXPECT_GE(ev.per_image[i].iou, 0.5);
  }

  const auto strict = evaluate_detector(t.model, samples, 1.0);
  for (const auto& r : strict.per_image) EXPECT_EQ(r.correct, r.best && r.best->box == samples[&r - &strict.per_image[0]].box);

  testing::TempDir dir;
  save_detector(t.model, dir / "d.eqm");
  const auto loaded = load_detector(dir / "d.eqm");
  for (const auto& s : samples) {
    const auto dets = detect(t.model, s.image);
    expect_valid_output(dets, cfg, s.image.width, s.image.height);
    EXPECT_EQ(detect(loaded, s.image), dets);
    EXPECT_EQ(detect(t.model, s.image), dets);
  }
  EXPECT_THROW(load_classifier(dir / "d.eqm"), ModelError);
}

TEST(Detector, CopiesAreIndependent) {
  const auto samples = testing::toy_detector_samples(1, 1);
  auto t = train_detector(samples, untrained_config());
  DetectorModel copy = t.model;
  copy.parameters().front()->value.setZero();
  EXPECT_NE(copy.parameters().front()->value, t.model.parameters().front()->value);
}

}  // namespace
}  // namespace equine

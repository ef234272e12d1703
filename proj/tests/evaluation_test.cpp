#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "equine/error.hpp"
#include "equine/evaluation.hpp"

namespace equine {
namespace {

using L = EmotionLabel;

TEST(Accuracy, Examples) {
  const std::vector<L> p{L::Alarmed, L::Annoyed, L::Curious, L::Relaxed};
  const std::vector<L> t{L::Alarmed, L::Annoyed, L::Relaxed, L::Relaxed};
  EXPECT_EQ(accuracy(p, t), 0.75);
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_THROW(accuracy({}, {}), UsageError);
  EXPECT_THROW(accuracy(p, std::vector<L>{L::Alarmed}), UsageError);
}

TEST(ConfusionMatrix, Example) {
  const std::vector<L> p{L::Alarmed, L::Annoyed, L::Curious, L::Relaxed, L::Alarmed};
  const std::vector<L> t{L::Alarmed, L::Annoyed, L::Relaxed, L::Relaxed, L::Curious};
  const auto m = confusion_matrix(p, t);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(1, 1), 1);
  EXPECT_EQ(m(3, 2), 1);
  EXPECT_EQ(m(3, 3), 1);
  EXPECT_EQ(m(2, 0), 1);
  EXPECT_EQ(m.sum(), 5);
  EXPECT_THROW(confusion_matrix({}, {}), UsageError);
}

TEST(ConfusionMatrix, RandomLabelingsAgreeWithAccuracy) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_int_distribution<int> len(1, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<L> p(n), t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = kEmotionLabels[pick(rng)];
      t[i] = kEmotionLabels[pick(rng)];
    }
    const auto r = evaluate(p, t);
    EXPECT_EQ(r.confusion.sum(), n);
    EXPECT_DOUBLE_EQ(static_cast<double>(r.confusion.trace()) / n, r.accuracy);
    // Row sums are the truth counts.
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(r.confusion.row(c).sum(), std::count(t.begin(), t.end(), kEmotionLabels[c]));
      EXPECT_EQ(r.confusion.col(c).sum(), std::count(p.begin(), p.end(), kEmotionLabels[c]));
    }
    // Jointly permuting the pairs changes nothing.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<L> p2(n), t2(n);
    for (int i = 0; i < n; ++i) {
      p2[i] = p[order[i]];
      t2[i] = t[order[i]];
    }
    EXPECT_EQ(confusion_matrix(p2, t2), r.confusion);
    EXPECT_EQ(accuracy(p2, t2), r.accuracy);
  }
}

TrainReport report_with(std::vector<std::pair<double, double>> val_train) {
  TrainReport r;
  int e = 1;
  for (auto [v, t] : val_train) r.epochs.push_back({e++, t, v, 0.0, 0.0});
  return r;
}

TEST(CvAverage, Examples) {
  const std::vector<TrainReport> reports{report_with({{0.5, 1.0}, {1.0, 0.5}}), report_with({{0.0, 0.5}, {0.5, 0.25}})};
  const auto c = cv_average(reports);
  EXPECT_EQ(c.val_accuracy, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(c.train_accuracy, (std::vector<double>{0.75, 0.375}));
  EXPECT_THROW(cv_average({}), UsageError);
  const std::vector<TrainReport> bad{report_with({{0.5, 1.0}}), report_with({{0.5, 1.0}, {0.5, 1.0}})};
  EXPECT_THROW(cv_average(bad), UsageError);
}

TEST(CvAverage, StaysWithinFoldBounds) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<TrainReport> reports(10);
  for (auto& r : reports) {
    std::vector<std::pair<double, double>> v;
    for (int e = 0; e < 40; ++e) v.emplace_back(u(rng), u(rng));
    r = report_with(v);
  }
  const auto c = cv_average(reports);
  ASSERT_EQ(c.val_accuracy.size(), 40u);
  for (std::size_t e = 0; e < 40; ++e) {
    double lo = 1, hi = 0, sum = 0;
    for (const auto& r : reports) {
      lo = std::min(lo, r.epochs[e].val_accuracy);
      hi = std::max(hi, r.epochs[e].val_accuracy);
      sum += r.epochs[e].val_accuracy;
    }
    EXPECT_GE(c.val_accuracy[e], lo);
    EXPECT_LE(c.val_accuracy[e], hi);
    EXPECT_NEAR(c.val_accuracy[e], sum / 10, 1e-15);
  }
}

TEST(Formats, Csv) {
  auto r = report_with({{0.5, 0.75}});
  r.epochs[0].train_loss = 1.25;
  r.epochs[0].val_loss = 2;
  EXPECT_EQ(format_train_report_csv(r), "epoch,train_accuracy,val_accuracy,train_loss,val_loss\n1,0.75,0.5,1.25,2\n");
  EXPECT_EQ(format_train_report_csv(TrainReport{}), "epoch,train_accuracy,val_accuracy,train_loss,val_loss\n");
  EXPECT_EQ(format_cv_curve_csv({{0.5}, {0.25}}), "epoch,val_accuracy,train_accuracy\n1,0.5,0.25\n");
  ConfusionMatrix m = ConfusionMatrix::Zero();
  m(0, 1) = 2;
  EXPECT_EQ(format_confusion_csv(m),
            "truth,Alarmed,Annoyed,Curious,Relaxed\nAlarmed,0,2,0,0\nAnnoyed,0,0,0,0\nCurious,0,0,0,0\nRelaxed,0,0,0,0\n");
}

TEST(Formats, Jsonl) {
  auto r = report_with({{0.5, 0.75}, {1, 1}});
  r.seed = 7;
  r.model_version = "v3";
  r.config = {{"base", "VGG16"}};
  const auto text = format_train_report_jsonl(r);
  std::istringstream in(text);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["seed"], 7);
  EXPECT_EQ(rows[0]["model_version"], "v3");
  EXPECT_EQ(rows[2]["epoch"], 2);
  EXPECT_EQ(rows[1]["val_accuracy"], 0.5);
}

TEST(Formats, EvaluationJson) {
  const std::vector<L> p{L::Alarmed, L::Relaxed};
  const auto j = evaluation_json(evaluate(p, p));
  EXPECT_EQ(j["accuracy"], 1.0);
  EXPECT_EQ(j["n"], 2);
  EXPECT_EQ(j["confusion"][3][3], 1);
  EXPECT_EQ(j["labels"][0], "Alarmed");
}

}  // namespace
}  // namespace equine

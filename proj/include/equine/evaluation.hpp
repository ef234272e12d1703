#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "equine/ethogram.hpp"
#include "equine/report.hpp"
#include "json.hpp"

namespace equine {

/// Rows are truth, columns prediction, both in canonical label order.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, 4, 4>;

/// Fraction of positions where prediction equals truth. Throws UsageError on
/// empty or unequal inputs.
double accuracy(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths);

ConfusionMatrix confusion_matrix(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths);

struct EvaluationReport {
  double accuracy = 0.0;
  ConfusionMatrix confusion = ConfusionMatrix::Zero();
  std::size_t n = 0;
};

EvaluationReport evaluate(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths);

struct CvCurves {
  std::vector<double> val_accuracy;
  std::vector<double> train_accuracy;
};

/// Element-wise mean over reports of the per-epoch accuracies. Throws
/// UsageError for an empty list or mismatched epoch counts.
CvCurves cv_average(std::span<const TrainReport> reports);

/// "epoch,train_accuracy,val_accuracy,train_loss,val_loss" rows.
std::string format_train_report_csv(const TrainReport& report);
/// One object per line: a header {config, seed, model_version} then epochs.
std::string format_train_report_jsonl(const TrainReport& report);
/// "epoch,val_accuracy,train_accuracy" rows.
std::string format_cv_curve_csv(const CvCurves& curves);

nlohmann::json evaluation_json(const EvaluationReport& report);
/// "truth,Alarmed,Annoyed,Curious,Relaxed" header then one row per truth label.
std::string format_confusion_csv(const ConfusionMatrix& m);

}  // namespace equine

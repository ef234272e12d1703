#include "equine/evaluation.hpp"

#include <sstream>

#include "equine/error.hpp"

namespace equine {

namespace {

void check_lengths(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths) {
  if (predictions.empty() || truths.empty()) throw UsageError("empty label lists");
  if (predictions.size() != truths.size()) {
    throw UsageError("length mismatch: " + std::to_string(predictions.size()) + " predictions, " +
                     std::to_string(truths.size()) + " truths");
  }
}

std::ostringstream csv_stream() {
  std::ostringstream out;
  out.precision(17);
  return out;
}

}  // namespace

double accuracy(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths) {
  check_lengths(predictions, truths);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

ConfusionMatrix confusion_matrix(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths) {
  check_lengths(predictions, truths);
  ConfusionMatrix m = ConfusionMatrix::Zero();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ++m(static_cast<Eigen::Index>(index_of(truths[i])), static_cast<Eigen::Index>(index_of(predictions[i])));
  }
  return m;
}

EvaluationReport evaluate(std::span<const EmotionLabel> predictions, std::span<const EmotionLabel> truths) {
  EvaluationReport r;
  r.confusion = confusion_matrix(predictions, truths);
  r.accuracy = accuracy(predictions, truths);
  r.n = predictions.size();
  return r;
}

CvCurves cv_average(std::span<const TrainReport> reports) {
  if (reports.empty()) throw UsageError("no reports to average");
  const std::size_t epochs = reports.front().epochs.size();
  CvCurves out;
  out.val_accuracy.assign(epochs, 0.0);
  out.train_accuracy.assign(epochs, 0.0);
  for (const auto& r : reports) {
    if (r.epochs.size() != epochs) {
      throw UsageError("mismatched epoch counts: " + std::to_string(epochs) + " vs " + std::to_string(r.epochs.size()));
    }
    for (std::size_t e = 0; e < epochs; ++e) {
      out.val_accuracy[e] += r.epochs[e].val_accuracy;
      out.train_accuracy[e] += r.epochs[e].train_accuracy;
    }
  }
  const double n = static_cast<double>(reports.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    out.val_accuracy[e] /= n;
    out.train_accuracy[e] /= n;
  }
  return out;
}

std::string format_train_report_csv(const TrainReport& report) {
  auto out = csv_stream();
  out << "epoch,train_accuracy,val_accuracy,train_loss,val_loss\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.train_accuracy << ',' << e.val_accuracy << ',' << e.train_loss << ',' << e.val_loss
        << '\n';
  }
  return out.str();
}

std::string format_train_report_jsonl(const TrainReport& report) {
  std::string out = nlohmann::json{{"config", report.config}, {"seed", report.seed}, {"model_version", report.model_version}}
                        .dump() +
                    '\n';
  for (const auto& e : report.epochs) {
    out += nlohmann::json{{"epoch", e.epoch},
                          {"train_accuracy", e.train_accuracy},
                          {"val_accuracy", e.val_accuracy},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss}}
               .dump() +
           '\n';
  }
  return out;
}

std::string format_cv_curve_csv(const CvCurves& curves) {
  auto out = csv_stream();
  out << "epoch,val_accuracy,train_accuracy\n";
  for (std::size_t e = 0; e < curves.val_accuracy.size(); ++e) {
    out << e + 1 << ',' << curves.val_accuracy[e] << ',' << curves.train_accuracy[e] << '\n';
  }
  return out.str();
}

nlohmann::json evaluation_json(const EvaluationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index t = 0; t < 4; ++t) {
    rows.push_back({report.confusion(t, 0), report.confusion(t, 1), report.confusion(t, 2), report.confusion(t, 3)});
  }
  nlohmann::json labels = nlohmann::json::array();
  for (EmotionLabel l : kEmotionLabels) labels.push_back(std::string(to_string(l)));
  return {{"accuracy", report.accuracy}, {"n", report.n}, {"labels", labels}, {"confusion", rows}};
}

std::string format_confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "truth";
  for (EmotionLabel l : kEmotionLabels) out << ',' << to_string(l);
  out << '\n';
  for (EmotionLabel t : kEmotionLabels) {
    out << to_string(t);
    for (Eigen::Index p = 0; p < 4; ++p) out << ',' << m(static_cast<Eigen::Index>(index_of(t)), p);
    out << '\n';
  }
  return out.str();
}

}  // namespace equine

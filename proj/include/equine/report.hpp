#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace equine {

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Per-epoch learning curves of one classifier training run.
struct TrainReport {
  std::vector<EpochMetrics> epochs;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string model_version;
};

}  // namespace equine

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"

namespace ekgnet::metrics {

struct Metrics {
  int classes = 0;
  std::vector<std::int64_t> confusion;  // classes x classes, rows = true
  std::vector<double> per_class_recall;
  double balanced_accuracy = 0.0;  // mean recall over classes present
  double plain_accuracy = 0.0;
  std::int64_t total = 0;

  std::int64_t at(int true_label, int predicted) const {
    return confusion[static_cast<std::size_t>(true_label * classes + predicted)];
  }
};

using PredictFn = std::function<int(const Beat&)>;

// Evaluates over the whole set, or over the given subset of indices.
Metrics evaluate(const PredictFn& predict, const BeatSet& set,
                 std::span<const std::uint32_t> indices = {});

Metrics metrics_from_confusion(int classes, std::span<const std::int64_t> confusion);

std::string confusion_csv(const BeatSet& set, const Metrics& m);
std::string metrics_json_fragment(const Metrics& m);

}  // namespace ekgnet::metrics

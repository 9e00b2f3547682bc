#include "core/metrics.hpp"

#include <numeric>

#include <json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace ekgnet::metrics {

Metrics metrics_from_confusion(int classes, std::span<const std::int64_t> confusion) {
  require(static_cast<int>(confusion.size()) == classes * classes, Errc::invalid_argument,
          "metrics: confusion size mismatch");
  Metrics m;
  m.classes = classes;
  m.confusion.assign(confusion.begin(), confusion.end());
  m.per_class_recall.assign(static_cast<std::size_t>(classes), 0.0);

  std::int64_t correct = 0;
  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    std::int64_t row = 0;
    for (int p = 0; p < classes; ++p) row += m.at(c, p);
    m.total += row;
    correct += m.at(c, c);
    if (row > 0) {
      m.per_class_recall[static_cast<std::size_t>(c)] =
          static_cast<double>(m.at(c, c)) / static_cast<double>(row);
      recall_sum += m.per_class_recall[static_cast<std::size_t>(c)];
      ++present;
    }
  }
  require(m.total > 0, Errc::invalid_argument, "metrics: no evaluated beats");
  m.balanced_accuracy = recall_sum / present;
  m.plain_accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  return m;
}

Metrics evaluate(const PredictFn& predict, const BeatSet& set, std::span<const std::uint32_t> indices) {
  std::vector<std::uint32_t> all;
  if (indices.empty()) {
    all.resize(set.beats.size());
    std::iota(all.begin(), all.end(), 0);
    indices = all;
  }
  require(!indices.empty(), Errc::invalid_argument, "evaluate: empty beat list");

  const int classes = set.num_classes();
  std::vector<int> predictions(indices.size());
  parallel_chunks(indices.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) predictions[i] = predict(set.beats[indices[i]]);
  });

  std::vector<std::int64_t> confusion(static_cast<std::size_t>(classes * classes), 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int truth = set.beats[indices[i]].label;
    const int pred = predictions[i];
    require(truth >= 0 && truth < classes, Errc::state, "evaluate: label out of range");
    require(pred >= 0 && pred < classes, Errc::state, "evaluate: prediction out of range");
    ++confusion[static_cast<std::size_t>(truth * classes + pred)];
  }
  return metrics_from_confusion(classes, confusion);
}

std::string confusion_csv(const BeatSet& set, const Metrics& m) {
  std::string out = "true\\pred";
  for (int p = 0; p < m.classes; ++p) {
    out += ',';
    out += class_name(set.task, p);
  }
  out += '\n';
  for (int c = 0; c < m.classes; ++c) {
    out += class_name(set.task, c);
    for (int p = 0; p < m.classes; ++p) {
      out += ',';
      out += std::to_string(m.at(c, p));
    }
    out += '\n';
  }
  return out;
}

std::string metrics_json_fragment(const Metrics& m) {
  using nlohmann::json;
  json j;
  j["classes"] = m.classes;
  j["total"] = m.total;
  j["balanced_accuracy"] = m.balanced_accuracy;
  j["plain_accuracy"] = m.plain_accuracy;
  j["per_class_recall"] = m.per_class_recall;
  json conf = json::array();
  for (int c = 0; c < m.classes; ++c) {
    json row = json::array();
    for (int p = 0; p < m.classes; ++p) row.push_back(m.at(c, p));
    conf.push_back(std::move(row));
  }
  j["confusion"] = conf;
  return j.dump();
}

}  // namespace ekgnet::metrics

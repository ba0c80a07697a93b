#include "ota/metrics.hpp"

#include <fmt/format.h>

#include "ota/error.hpp"
#include "ota/training.hpp"

namespace ota {

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"acc", acc},
                      {"avg", avg},
                      {"class_counts", class_counts},
                      {"correct", correct},
                      {"per_class", per_class},
                      {"seed", seed}};
  j["buckets"] = nlohmann::json::object();
  for (const auto& [name, value] : buckets) j["buckets"][name] = value;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.acc = j.at("acc").get<double>();
  m.avg = j.at("avg").get<double>();
  m.class_counts = j.value("class_counts", std::vector<std::size_t>{});
  m.correct = j.value("correct", std::vector<std::size_t>{});
  m.per_class = j.value("per_class", std::vector<double>{});
  m.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("buckets")) {
    for (const auto& [name, value] : j["buckets"].items()) m.buckets[name] = value.get<double>();
  }
  return m;
}

MetricsReport metrics_from_predictions(std::span<const int> predictions, std::span<const int> labels,
                                       std::size_t num_classes, const ClassBuckets* buckets) {
  if (labels.empty()) throw ConfigError("evaluation set is empty");
  if (predictions.size() != labels.size()) throw ShapeError("one prediction per label required");
  MetricsReport m;
  m.class_counts.assign(num_classes, 0);
  m.correct.assign(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ConfigError(fmt::format("label {} out of range [0, {})", y, num_classes));
    }
    ++m.class_counts[static_cast<std::size_t>(y)];
    if (predictions[i] == y) ++m.correct[static_cast<std::size_t>(y)];
  }
  std::size_t total_correct = 0;
  double class_sum = 0.0;
  std::size_t present = 0;
  m.per_class.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    total_correct += m.correct[c];
    if (m.class_counts[c] == 0) continue;
    m.per_class[c] = static_cast<double>(m.correct[c]) / static_cast<double>(m.class_counts[c]);
    class_sum += m.per_class[c];
    ++present;
  }
  m.acc = static_cast<double>(total_correct) / static_cast<double>(labels.size());
  m.avg = class_sum / static_cast<double>(present);

  if (buckets != nullptr) {
    if (buckets->train_counts.size() != num_classes) {
      throw ConfigError("bucket metadata does not match the number of classes");
    }
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
    for (std::size_t c = 0; c < num_classes; ++c) {
      auto& [hit, n] = tally[to_string(buckets->of(c))];
      hit += m.correct[c];
      n += m.class_counts[c];
    }
    for (const auto& [name, counts] : tally) {
      if (counts.second > 0) {
        m.buckets[name] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
      }
    }
  }
  return m;
}

MetricsReport evaluate(const Network& model, const Dataset& labeled, const ClassBuckets* buckets) {
  const auto& labels = labeled.label_values();
  if (labeled.size() == 0) throw ConfigError("evaluation set is empty");
  Network net = model;
  const std::vector<int> pred = predict(net, labeled.features);
  return metrics_from_predictions(pred, labels, labeled.num_classes, buckets);
}

}  // namespace ota

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/network.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

// acc = sum_c correct_c / sum_c n_c ; avg = mean over classes present of correct_c / n_c.
struct MetricsReport {
  double acc = 0.0;
  double avg = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<std::size_t> correct;
  std::vector<double> per_class;
  // many / medium / few accuracies (sample-weighted within the bucket).
  std::map<std::string, double> buckets;
  double runtime_seconds = 0.0;
  std::uint64_t seed = 0;

  // Runtime is omitted so the JSON is a pure function of (config, seed).
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

MetricsReport metrics_from_predictions(std::span<const int> predictions, std::span<const int> labels,
                                       std::size_t num_classes,
                                       const ClassBuckets* buckets = nullptr);

MetricsReport evaluate(const Network& model, const Dataset& labeled,
                       const ClassBuckets* buckets = nullptr);

struct ProbeConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Eval-mode output of a classifier-free network.
Tensor extract_features(const Network& backbone, const Tensor& x);

// Trains a softmax-regression probe on standardised train features and
// returns its accuracy on the test features.
double linear_probe_accuracy(const Tensor& train_x, std::span<const int> train_y,
                             const Tensor& test_x, std::span<const int> test_y,
                             std::size_t num_classes, const ProbeConfig& cfg, Rng& rng);

}  // namespace ota

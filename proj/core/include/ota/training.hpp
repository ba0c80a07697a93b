#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "ota/losses.hpp"
#include "ota/network.hpp"
#include "ota/rng.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

// Shuffled index batches covering [0, n). A trailing batch of a single row is
// folded into the previous batch so batchnorm always sees at least two rows.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng);

// Eval-mode softmax outputs; the network's mode is restored afterwards.
Probs predict_probs(Network& net, const Tensor& x);
std::vector<int> predict(Network& net, const Tensor& x);

void require_finite(double loss, const char* what);

// Stage 0: supervised training on labeled source data with label smoothing,
// SGD with momentum and a cosine learning-rate schedule.
struct SourceTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static SourceTrainConfig from_json(const nlohmann::json& j);
};

struct SourceTrainReport {
  std::vector<double> epoch_loss;
};

Network train_source(const ArchSpec& arch, const Dataset& source, const SourceTrainConfig& cfg,
                     Rng& rng, SourceTrainReport* report = nullptr);

}  // namespace ota

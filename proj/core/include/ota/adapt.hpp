#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/network.hpp"
#include "ota/rng.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

enum class UpdateSet { batchnorm_only, representation_all };

std::string to_string(UpdateSet u);
UpdateSet parse_update_set(const std::string& text);

// Test-time InfoMax adaptation. Defaults are rescaled for small dense nets;
// the ResNet recipe used lr 1e-4.
struct AdaptConfig {
  std::size_t epochs = 5;
  // 0 means one pass over the target data per epoch.
  std::size_t steps_per_epoch = 0;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  UpdateSet update_set = UpdateSet::representation_all;
  double entropy_weight = 1.0;
  double diversity_weight = 1.0;
  // Diversity against the dataset-wide marginal (refreshed each epoch)
  // instead of the mini-batch marginal.
  bool global_diversity = false;

  void validate() const;
  nlohmann::json to_json() const;
  static AdaptConfig from_json(const nlohmann::json& j);
};

struct AdaptEpoch {
  double infomax = 0.0;
  double entropy = 0.0;
  double diversity = 0.0;
};

struct AdaptReport {
  std::vector<AdaptEpoch> epochs;
  double delta_norm = 0.0;
  std::string classifier_before;
  std::string classifier_after;
  std::size_t steps = 0;
  bool aborted = false;
  std::string abort_reason;

  nlohmann::json to_json() const;
};

struct ParameterPartition {
  std::vector<ParamRef> trainable;
  std::vector<ParamRef> frozen;
};

// The classifier always lands in `frozen`.
ParameterPartition partition_parameters(Network& net, UpdateSet update_set);

// Returns an adapted copy of `source`; the classifier is never updated.
std::pair<Network, AdaptReport> adapt(const Network& source, const UnlabeledView& target,
                                      const AdaptConfig& cfg, Rng& rng);

}  // namespace ota

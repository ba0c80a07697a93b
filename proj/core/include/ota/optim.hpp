#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ota/network.hpp"

namespace ota {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// SGD with heavy-ball momentum:
//   v <- momentum * v + grad + weight_decay * param   (decay on dense weights only)
//   param <- param - lr * v
// Velocity buffers are keyed by parameter name.
class Sgd {
 public:
  explicit Sgd(SgdConfig config = {}) : config_(config) {}

  const SgdConfig& config() const noexcept { return config_; }
  void step(std::span<const ParamRef> params, double lr);
  void step(std::span<const ParamRef> params) { step(params, config_.learning_rate); }
  void reset() { velocity_.clear(); }

 private:
  SgdConfig config_;
  std::map<std::string, std::vector<double>> velocity_;
};

enum class ScheduleKind { constant, cosine };

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_lr = 0.1;
  double min_lr = 0.0;
  std::size_t total_steps = 1;

  static Schedule constant(double lr) { return {ScheduleKind::constant, lr, lr, 1}; }
  static Schedule cosine(double base, double min, std::size_t steps) {
    return {ScheduleKind::cosine, base, min, steps};
  }

  // cosine: min + (base - min) * (1 + cos(pi * step / total)) / 2
  double lr_at(std::size_t step) const;
};

}  // namespace ota

#include "ota/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

void Sgd::step(std::span<const ParamRef> params, double lr) {
  for (const ParamRef& p : params) {
    Tensor& t = *p.tensor;
    if (!t.has_grad()) throw ConfigError(fmt::format("parameter '{}' has no gradient", p.name));
    auto& v = velocity_[p.name];
    if (v.size() != t.size()) v.assign(t.size(), 0.0);
    const double wd = p.decays() ? config_.weight_decay : 0.0;
    const auto g = t.grad();
    auto x = t.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      v[i] = config_.momentum * v[i] + g[i] + wd * x[i];
      x[i] -= lr * v[i];
    }
  }
}

double Schedule::lr_at(std::size_t step) const {
  if (step > total_steps) {
    throw ConfigError(fmt::format("schedule step {} outside [0, {}]", step, total_steps));
  }
  if (kind == ScheduleKind::constant) return base_lr;
  if (step == total_steps) return min_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace ota

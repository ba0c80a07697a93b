#include <cmath>

#include <fmt/format.h>

#include "ota/distill.hpp"
#include "ota/error.hpp"
#include "ota/training.hpp"

namespace ota {

void CalibrateConfig::validate() const {
  if (batch_size < 1) throw ConfigError("calibration batch size must be positive");
  if (!(lr >= 0.0) || !(momentum >= 0.0)) {
    throw ConfigError("calibration lr and momentum must be non-negative");
  }
}

nlohmann::json CalibrateConfig::to_json() const {
  return {{"rounds", rounds}, {"epochs", epochs}, {"batch_size", batch_size},
          {"lr", lr},         {"momentum", momentum}};
}

CalibrateConfig CalibrateConfig::from_json(const nlohmann::json& j) {
  CalibrateConfig c;
  c.rounds = j.value("rounds", c.rounds);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.validate();
  return c;
}

Network apply_scales(const Network& model, const ScaleVector& scales) {
  Network out = model;
  Dense& cls = out.classifier();
  if (scales.s.size() != cls.out_dim()) {
    throw ShapeError(fmt::format("scale vector has {} entries for {} classes", scales.s.size(),
                                 cls.out_dim()));
  }
  for (std::size_t c = 0; c < cls.out_dim(); ++c) {
    if (!(scales.s[c] > 0.0)) throw ConfigError("classifier scales must be positive");
    for (double& w : cls.weight.row(c)) w *= scales.s[c];
  }
  return out;
}

namespace {

// Raw classifier responses <w_c, f(x)> before scaling and bias.
Tensor responses(const Dense& cls, const Tensor& features) {
  Tensor r = Tensor::matrix(features.rows(), cls.out_dim());
  r.mat().noalias() = features.mat() * cls.weight.mat().transpose();
  return r;
}

Tensor scaled_logits(const Tensor& resp, const Dense& cls, const std::vector<double>& s) {
  Tensor z = resp;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) = s[c] * resp(r, c) + cls.bias[c];
  }
  return z;
}

}  // namespace

CalibrationResult calibrate_classifier(const Network& model, const UnlabeledView& target,
                                       const CalibrateConfig& cfg,
                                       const AugmentationPolicy& policy, Rng& rng) {
  cfg.validate();
  policy.validate();
  Network frozen = model;
  frozen.clear_caches();
  frozen.set_mode(Mode::eval);
  const Dense& cls = frozen.classifier();
  const std::size_t k = cls.out_dim();

  // s = exp(u) keeps every scale strictly positive.
  std::vector<double> u(k, 0.0);
  std::vector<double> velocity(k, 0.0);
  auto scales = [&u] {
    std::vector<double> s(u.size());
    for (std::size_t c = 0; c < u.size(); ++c) s[c] = std::exp(u[c]);
    return s;
  };

  CalibrationResult result;
  Rng batch_rng = rng.substream("batches");
  std::vector<int> previous;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    Rng weak_rng = rng.substream("weak", round);
    const Tensor weak = augment(target.features(), policy, AugmentMode::weak, weak_rng);
    const Tensor weak_resp = responses(cls, frozen.features(weak));
    const std::vector<int> labels = softmax(scaled_logits(weak_resp, cls, scales())).argmax();
    if (!previous.empty()) {
      std::size_t same = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) same += labels[i] == previous[i];
      result.round_agreement.push_back(static_cast<double>(same) / static_cast<double>(labels.size()));
    }
    previous = labels;

    double round_total = 0.0;
    std::size_t round_seen = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng strong_rng = rng.substream("strong", round * 100003 + epoch);
      const Tensor strong = augment(target.features(), policy, AugmentMode::strong, strong_rng);
      const Tensor strong_resp = responses(cls, frozen.features(strong));
      for (const auto& batch : minibatches(target.size(), cfg.batch_size, batch_rng)) {
        const Tensor resp = strong_resp.gather_rows(batch);
        std::vector<int> y(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
        const std::vector<double> s = scales();
        const Probs p = softmax(scaled_logits(resp, cls, s));
        const LossValue loss = cross_entropy(p, y, 0.0);
        require_finite(loss.value, "calibration");
        const Tensor dz = softmax_backward(p, loss.grad);
        for (std::size_t c = 0; c < k; ++c) {
          double g = 0.0;
          for (std::size_t r = 0; r < dz.rows(); ++r) g += dz(r, c) * resp(r, c);
          g *= s[c];
          velocity[c] = cfg.momentum * velocity[c] + g;
          u[c] -= cfg.lr * velocity[c];
        }
        round_total += loss.value * static_cast<double>(batch.size());
        round_seen += batch.size();
      }
    }
    if (round_seen > 0) result.round_loss.push_back(round_total / static_cast<double>(round_seen));
  }

  result.scales.s = scales();
  for (double v : result.scales.s) {
    if (!std::isfinite(v) || !(v > 0.0)) throw NumericalError("calibration scales diverged");
  }
  result.model = apply_scales(frozen, result.scales);
  return result;
}

}  // namespace ota

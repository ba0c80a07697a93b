#include <cmath>

#include "ota/error.hpp"
#include "ota/metrics.hpp"
#include "ota/optim.hpp"
#include "ota/training.hpp"

namespace ota {

Tensor extract_features(const Network& backbone, const Tensor& x) {
  Network net = backbone;
  net.set_mode(Mode::eval);
  return net.features(x);
}

double linear_probe_accuracy(const Tensor& train_x, std::span<const int> train_y,
                             const Tensor& test_x, std::span<const int> test_y,
                             std::size_t num_classes, const ProbeConfig& cfg, Rng& rng) {
  if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size()) {
    throw ShapeError("probe features and labels disagree in length");
  }
  const std::size_t d = train_x.cols();
  std::vector<double> mean(d, 0.0), inv_std(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = train_x.mat().col(static_cast<Eigen::Index>(j));
    mean[j] = col.mean();
    const double var = (col.array() - mean[j]).square().mean();
    inv_std[j] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
  auto standardise = [&](const Tensor& x) {
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t j = 0; j < d; ++j) out(r, j) = (out(r, j) - mean[j]) * inv_std[j];
    }
    return out;
  };
  const Tensor xtr = standardise(train_x);
  const Tensor xte = standardise(test_x);

  Rng init_rng = rng.substream("probe_init");
  Rng batch_rng = rng.substream("probe_batches");
  Network probe({Dense::initialized(d, num_classes, init_rng)}, true);
  probe.set_mode(Mode::train);
  Sgd opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  const std::size_t per_epoch = (xtr.rows() + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched = Schedule::cosine(cfg.lr, 0.0, std::max<std::size_t>(1, cfg.epochs * per_epoch));
  auto params = probe.parameters();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : minibatches(xtr.rows(), cfg.batch_size, batch_rng)) {
      const Tensor x = xtr.gather_rows(batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = train_y[batch[i]];
      const Probs p = softmax(probe.forward(x));
      const LossValue loss = cross_entropy(p, y, 0.0);
      require_finite(loss.value, "linear probe");
      probe.backward(softmax_backward(p, loss.grad));
      opt.step(params, sched.lr_at(std::min(step, sched.total_steps)));
      ++step;
    }
  }
  const std::vector<int> pred = predict(probe, xte);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == test_y[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace ota

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ota/error.hpp"
#include "ota/optim.hpp"
#include "ota/training.hpp"

namespace ota {

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    if (stop - start == 1 && !batches.empty()) {
      batches.back().push_back(order[start]);
    } else {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  return batches;
}

Probs predict_probs(Network& net, const Tensor& x) {
  const Mode previous = net.mode();
  net.set_mode(Mode::eval);
  Tensor logits = net.forward(x);
  net.set_mode(previous);
  net.clear_caches();
  return softmax(logits);
}

std::vector<int> predict(Network& net, const Tensor& x) { return predict_probs(net, x).argmax(); }

void require_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericalError(fmt::format("{} loss became non-finite", what));
}

void SourceTrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("source training batch size must be >= 2");
  if (!(lr > 0.0)) throw ConfigError("source training lr must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
}

nlohmann::json SourceTrainConfig::to_json() const {
  return {{"epochs", epochs},     {"batch_size", batch_size},     {"lr", lr},
          {"momentum", momentum}, {"weight_decay", weight_decay}, {"label_smoothing", label_smoothing}};
}

SourceTrainConfig SourceTrainConfig::from_json(const nlohmann::json& j) {
  SourceTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.validate();
  return c;
}

Network train_source(const ArchSpec& arch, const Dataset& source, const SourceTrainConfig& cfg,
                     Rng& rng, SourceTrainReport* report) {
  cfg.validate();
  const auto& labels = source.label_values();
  if (source.dim() != arch.input_dim || source.num_classes != arch.num_classes) {
    throw ArchitectureMismatch(fmt::format("architecture {} does not fit data of width {} with {} classes",
                                           arch.to_string(), source.dim(), source.num_classes));
  }
  Rng init_rng = rng.substream("init");
  Rng batch_rng = rng.substream("batches");
  Network net = Network::build(arch, init_rng);
  net.set_mode(Mode::train);
  Sgd opt({cfg.lr, cfg.momentum, cfg.weight_decay});

  const std::size_t per_epoch = (source.size() + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched = Schedule::cosine(cfg.lr, 0.0, std::max<std::size_t>(1, cfg.epochs * per_epoch));
  std::size_t step = 0;
  auto params = net.parameters();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : minibatches(source.size(), cfg.batch_size, batch_rng)) {
      const Tensor x = source.features.gather_rows(batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
      const Probs p = softmax(net.forward(x));
      const LossValue loss = cross_entropy(p, y, cfg.label_smoothing);
      require_finite(loss.value, "source training");
      net.backward(softmax_backward(p, loss.grad));
      opt.step(params, sched.lr_at(std::min(step, sched.total_steps)));
      ++step;
      total += loss.value * static_cast<double>(batch.size());
      seen += batch.size();
    }
    if (report != nullptr) report->epoch_loss.push_back(total / static_cast<double>(seen));
  }
  net.clear_caches();
  net.set_mode(Mode::eval);
  return net;
}

}  // namespace ota

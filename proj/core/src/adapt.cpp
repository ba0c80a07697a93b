#include "ota/adapt.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ota/error.hpp"
#include "ota/losses.hpp"
#include "ota/optim.hpp"
#include "ota/training.hpp"

namespace ota {

std::string to_string(UpdateSet u) {
  return u == UpdateSet::batchnorm_only ? "batchnorm_only" : "representation_all";
}

UpdateSet parse_update_set(const std::string& text) {
  if (text == "batchnorm_only") return UpdateSet::batchnorm_only;
  if (text == "representation_all") return UpdateSet::representation_all;
  throw ConfigError(fmt::format("unknown update set '{}'", text));
}

void AdaptConfig::validate() const {
  if (batch_size < 2) throw ConfigError("adapt batch size must be >= 2 (batchnorm)");
  if (!(lr >= 0.0)) throw ConfigError("adapt lr must be non-negative");
  if (!(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("adapt momentum and weight decay must be non-negative");
  }
}

nlohmann::json AdaptConfig::to_json() const {
  return {{"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"batch_size", batch_size},
          {"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"update_set", to_string(update_set)},
          {"entropy_weight", entropy_weight},
          {"diversity_weight", diversity_weight},
          {"global_diversity", global_diversity}};
}

AdaptConfig AdaptConfig::from_json(const nlohmann::json& j) {
  AdaptConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.update_set = parse_update_set(j.value("update_set", to_string(c.update_set)));
  c.entropy_weight = j.value("entropy_weight", c.entropy_weight);
  c.diversity_weight = j.value("diversity_weight", c.diversity_weight);
  c.global_diversity = j.value("global_diversity", c.global_diversity);
  c.validate();
  return c;
}

nlohmann::json AdaptReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back(
        {{"infomax", e.infomax}, {"entropy", e.entropy}, {"diversity", e.diversity}});
  }
  return {{"epochs", epochs_json},
          {"delta_norm", delta_norm},
          {"classifier_fingerprint_before", classifier_before},
          {"classifier_fingerprint_after", classifier_after},
          {"steps", steps},
          {"aborted", aborted},
          {"abort_reason", abort_reason}};
}

ParameterPartition partition_parameters(Network& net, UpdateSet update_set) {
  ParameterPartition part;
  for (auto& p : net.parameters()) {
    bool train = !p.classifier;
    if (update_set == UpdateSet::batchnorm_only) {
      train = train && (p.role == ParamRole::gamma || p.role == ParamRole::beta);
    }
    (train ? part.trainable : part.frozen).push_back(std::move(p));
  }
  return part;
}

namespace {

// d(-H(m))/dp_ic for a fixed marginal m, spread over a batch of n rows.
LossValue diversity_against(const Probs& probs, const std::vector<double>& marginal) {
  LossValue out;
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  out.grad = Tensor::matrix(n, k);
  for (std::size_t c = 0; c < k; ++c) {
    const double lp = std::log(std::max(marginal[c], kProbFloor));
    out.value += marginal[c] * lp;
    for (std::size_t r = 0; r < n; ++r) out.grad(r, c) = (lp + 1.0) / static_cast<double>(n);
  }
  return out;
}

std::vector<double> dataset_marginal(Network& net, const Tensor& x) {
  const Probs p = predict_probs(net, x);
  std::vector<double> m(p.cols(), 0.0);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t c = 0; c < p.cols(); ++c) m[c] += p(r, c);
  }
  for (double& v : m) v /= static_cast<double>(p.rows());
  return m;
}

}  // namespace

std::pair<Network, AdaptReport> adapt(const Network& source, const UnlabeledView& target,
                                      const AdaptConfig& cfg, Rng& rng) {
  cfg.validate();
  if (target.dim() != source.input_dim()) {
    throw ShapeError(fmt::format("target width {} does not match network input {}", target.dim(),
                                 source.input_dim()));
  }
  if (target.size() < 2) throw ShapeError("adapt needs at least two target rows");

  Network net = source;
  net.clear_caches();
  AdaptReport report;
  report.classifier_before = net.classifier_fingerprint();

  Rng batch_rng = rng.substream("batches");
  Sgd opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  const ParameterPartition initial = partition_parameters(net, cfg.update_set);
  std::vector<Tensor> start_values;
  for (const auto& p : initial.trainable) start_values.push_back(*p.tensor);

  Network last_good = net;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !report.aborted; ++epoch) {
    std::vector<double> marginal;
    if (cfg.global_diversity) marginal = dataset_marginal(net, target.features());
    net.set_mode(Mode::train);

    auto batches = minibatches(target.size(), cfg.batch_size, batch_rng);
    if (cfg.steps_per_epoch > 0 && batches.size() > cfg.steps_per_epoch) {
      batches.resize(cfg.steps_per_epoch);
    }
    AdaptEpoch summary;
    std::size_t seen = 0;
    for (const auto& batch : batches) {
      try {
        const Tensor x = target.features().gather_rows(batch);
        const Probs p = softmax(net.forward(x));
        const LossValue ent = entropy_loss(p);
        const LossValue div = cfg.global_diversity ? diversity_against(p, marginal) : diversity_loss(p);
        const double total = cfg.entropy_weight * ent.value + cfg.diversity_weight * div.value;
        require_finite(total, "InfoMax");
        Tensor dprobs = ent.grad;
        dprobs.mat() = cfg.entropy_weight * ent.grad.mat() + cfg.diversity_weight * div.grad.mat();
        net.backward(softmax_backward(p, dprobs));
        const ParameterPartition part = partition_parameters(net, cfg.update_set);
        opt.step(part.trainable, cfg.lr);
        for (const auto& q : part.trainable) {
          if (!q.tensor->all_finite()) throw NumericalError("adapted parameters became non-finite");
        }
        const double w = static_cast<double>(batch.size());
        summary.infomax += total * w;
        summary.entropy += ent.value * w;
        summary.diversity += div.value * w;
        seen += batch.size();
        ++report.steps;
        last_good = net;
      } catch (const NumericalError& e) {
        report.aborted = true;
        report.abort_reason = e.what();
        net = last_good;
        break;
      }
    }
    if (seen > 0) {
      const double n = static_cast<double>(seen);
      report.epochs.push_back({summary.infomax / n, summary.entropy / n, summary.diversity / n});
    }
  }

  net.clear_caches();
  net.set_mode(Mode::eval);
  const ParameterPartition final_part = partition_parameters(net, cfg.update_set);
  double sq = 0.0;
  for (std::size_t i = 0; i < final_part.trainable.size(); ++i) {
    const auto a = final_part.trainable[i].tensor->data();
    const auto b = start_values[i].data();
    for (std::size_t j = 0; j < a.size(); ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
  }
  report.delta_norm = std::sqrt(sq);
  report.classifier_after = net.classifier_fingerprint();
  return {std::move(net), std::move(report)};
}

}  // namespace ota

#include "ota/network.hpp"

#include <charconv>

#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t parse_dim(std::string_view token, std::string_view text) {
  std::size_t value = 0;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw ConfigError(fmt::format("invalid architecture spec '{}'", text));
  }
  return value;
}

std::vector<const Tensor*> pointers(const std::vector<NamedTensor>& named) {
  std::vector<const Tensor*> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

}  // namespace

ArchSpec ArchSpec::parse(std::string_view text) {
  ArchSpec spec;
  std::string_view body = text;
  constexpr std::string_view kNoBn = ":nobn";
  if (body.size() > kNoBn.size() && body.substr(body.size() - kNoBn.size()) == kNoBn) {
    spec.batchnorm = false;
    body.remove_suffix(kNoBn.size());
  }
  std::vector<std::size_t> dims;
  std::size_t start = 0;
  while (start <= body.size()) {
    const std::size_t dash = body.find('-', start);
    const std::size_t stop = dash == std::string_view::npos ? body.size() : dash;
    dims.push_back(parse_dim(body.substr(start, stop - start), text));
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  if (dims.size() < 2) throw ConfigError(fmt::format("invalid architecture spec '{}'", text));
  spec.input_dim = dims.front();
  spec.num_classes = dims.back();
  spec.hidden.assign(dims.begin() + 1, dims.end() - 1);
  return spec;
}

std::string ArchSpec::to_string() const {
  std::string s = std::to_string(input_dim);
  for (std::size_t h : hidden) s += "-" + std::to_string(h);
  s += "-" + std::to_string(num_classes);
  if (!batchnorm) s += ":nobn";
  return s;
}

Network::Network(std::vector<Layer> layers, bool has_classifier)
    : layers_(std::move(layers)), has_classifier_(has_classifier) {
  if (has_classifier_ && (layers_.empty() || !std::holds_alternative<Dense>(layers_.back()))) {
    throw ConfigError("a network with a classifier must end in a dense layer");
  }
}

Network Network::build(const ArchSpec& arch, Rng& rng) {
  Network net = build_backbone(arch, rng);
  net.layers_.emplace_back(Dense::initialized(arch.feature_dim(), arch.num_classes, rng));
  net.has_classifier_ = true;
  return net;
}

Network Network::build_backbone(const ArchSpec& arch, Rng& rng) {
  if (arch.input_dim == 0) throw ConfigError("architecture input dim must be positive");
  std::vector<Layer> layers;
  std::size_t width = arch.input_dim;
  for (std::size_t h : arch.hidden) {
    layers.emplace_back(Dense::initialized(width, h, rng));
    if (arch.batchnorm) layers.emplace_back(BatchNorm(h));
    layers.emplace_back(Relu(h));
    width = h;
  }
  return Network(std::move(layers), false);
}

Network Network::concat(const Network& front, const Network& back) {
  std::vector<Layer> layers = front.layers_;
  layers.insert(layers.end(), back.layers_.begin(), back.layers_.end());
  Network net(std::move(layers), back.has_classifier_);
  net.mode_ = front.mode_;
  return net;
}

Tensor Network::forward(const Tensor& batch) {
  if (batch.rank() != 2) throw ShapeError("network input must be a matrix");
  if (batch.rows() == 0) throw ShapeError("network input batch is empty");
  Tensor h = batch;
  for (auto& layer : layers_) {
    h = std::visit([&](auto& l) { return l.forward(h, mode_); }, layer);
  }
  if (!h.all_finite()) throw NumericalError("network forward produced non-finite values");
  return h;
}

Tensor Network::features(const Tensor& batch) {
  if (!has_classifier_) return forward(batch);
  Tensor h = batch;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = std::visit([&](auto& l) { return l.forward(h, mode_); }, layers_[i]);
  }
  if (!h.all_finite()) throw NumericalError("network features are non-finite");
  return h;
}

Tensor Network::backward(const Tensor& upstream) {
  for (const auto& layer : layers_) {
    const bool cached = std::visit([](const auto& l) { return l.has_cache(); }, layer);
    if (!cached) throw ConfigError("backward called without a recorded forward pass");
  }
  Tensor g = upstream;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = std::visit([&](auto& l) { return l.backward(g); }, *it);
  }
  return g;
}

std::size_t Network::classifier_index() const {
  if (!has_classifier_) throw ConfigError("network has no classifier");
  return layers_.size() - 1;
}

const Dense& Network::classifier() const { return std::get<Dense>(layers_.at(classifier_index())); }
Dense& Network::classifier() { return std::get<Dense>(layers_.at(classifier_index())); }

std::size_t Network::input_dim() const {
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<Dense>(&layer)) return d->in_dim();
  }
  throw ConfigError("network has no dense layer");
}

std::size_t Network::output_dim() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (const auto* d = std::get_if<Dense>(&*it)) return d->out_dim();
  }
  throw ConfigError("network has no dense layer");
}

std::size_t Network::feature_dim() const {
  if (!has_classifier_) return output_dim();
  return classifier().in_dim();
}

Network Network::backbone() const {
  if (!has_classifier_) return *this;
  return slice(0, classifier_index(), false);
}

Network Network::slice(std::size_t begin, std::size_t end, bool has_classifier) const {
  if (begin > end || end > layers_.size()) throw ConfigError("layer slice out of range");
  std::vector<Layer> layers(layers_.begin() + static_cast<std::ptrdiff_t>(begin),
                            layers_.begin() + static_cast<std::ptrdiff_t>(end));
  Network net(std::move(layers), has_classifier);
  net.mode_ = mode_;
  return net;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  const std::size_t cls = has_classifier_ ? layers_.size() - 1 : layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool is_cls = i == cls;
    const std::string prefix = fmt::format("layers.{}.", i);
    std::visit(Overloaded{
                   [&](Dense& d) {
                     out.push_back({prefix + "weight", &d.weight, ParamRole::weight, i, is_cls});
                     out.push_back({prefix + "bias", &d.bias, ParamRole::bias, i, is_cls});
                   },
                   [&](BatchNorm& b) {
                     out.push_back({prefix + "gamma", &b.gamma, ParamRole::gamma, i, is_cls});
                     out.push_back({prefix + "beta", &b.beta, ParamRole::beta, i, is_cls});
                   },
                   [](Relu&) {},
               },
               layers_[i]);
  }
  return out;
}

std::vector<NamedTensor> Network::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = fmt::format("layers.{}.", i);
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     out.push_back({prefix + "weight", &d.weight});
                     out.push_back({prefix + "bias", &d.bias});
                   },
                   [&](const BatchNorm& b) {
                     out.push_back({prefix + "gamma", &b.gamma});
                     out.push_back({prefix + "beta", &b.beta});
                     out.push_back({prefix + "running_mean", &b.running_mean});
                     out.push_back({prefix + "running_var", &b.running_var});
                   },
                   [](const Relu&) {},
               },
               layers_[i]);
  }
  return out;
}

std::vector<Tensor*> Network::mutable_state() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](Dense& d) {
                     out.push_back(&d.weight);
                     out.push_back(&d.bias);
                   },
                   [&](BatchNorm& b) {
                     out.push_back(&b.gamma);
                     out.push_back(&b.beta);
                     out.push_back(&b.running_mean);
                     out.push_back(&b.running_var);
                   },
                   [](Relu&) {},
               },
               layer);
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    if (const auto* d = std::get_if<Dense>(&layer)) n += d->weight.size() + d->bias.size();
    if (const auto* b = std::get_if<BatchNorm>(&layer)) n += 2 * b->dim();
  }
  return n;
}

nlohmann::json Network::architecture() const {
  nlohmann::json arch = nlohmann::json::array();
  for (const auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     arch.push_back({{"kind", "dense"}, {"in", d.in_dim()}, {"out", d.out_dim()}});
                   },
                   [&](const BatchNorm& b) {
                     arch.push_back({{"kind", "batchnorm"}, {"dim", b.dim()}});
                   },
                   [&](const Relu& r) { arch.push_back({{"kind", "relu"}, {"dim", r.width}}); },
               },
               layer);
  }
  return arch;
}

Network Network::from_architecture(const nlohmann::json& arch, bool has_classifier) {
  if (!arch.is_array()) throw FormatError("architecture must be a JSON array");
  std::vector<Layer> layers;
  for (const auto& entry : arch) {
    const std::string kind = entry.at("kind").get<std::string>();
    if (kind == "dense") {
      layers.emplace_back(Dense(entry.at("in").get<std::size_t>(), entry.at("out").get<std::size_t>()));
    } else if (kind == "batchnorm") {
      layers.emplace_back(BatchNorm(entry.at("dim").get<std::size_t>()));
    } else if (kind == "relu") {
      layers.emplace_back(Relu(entry.value("dim", std::size_t{0})));
    } else {
      throw FormatError(fmt::format("unknown layer kind '{}'", kind));
    }
  }
  return Network(std::move(layers), has_classifier);
}

bool Network::same_architecture(const Network& other) const {
  return has_classifier_ == other.has_classifier_ && architecture() == other.architecture();
}

std::string Network::fingerprint() const {
  const auto ptrs = pointers(state());
  return ota::fingerprint(ptrs);
}

std::string Network::classifier_fingerprint() const {
  const Dense& c = classifier();
  const Tensor* ptrs[] = {&c.weight, &c.bias};
  return ota::fingerprint(ptrs);
}

std::string Network::backbone_fingerprint() const { return backbone().fingerprint(); }

void Network::clear_caches() noexcept {
  for (auto& layer : layers_) std::visit([](auto& l) { l.clear_cache(); }, layer);
}

}  // namespace ota

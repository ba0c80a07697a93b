#include "ota/selfsup.hpp"

#include <fmt/format.h>

#include "ota/error.hpp"
#include "ota/losses.hpp"
#include "ota/optim.hpp"
#include "ota/training.hpp"

namespace ota {

std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::contrastive: return "contrastive";
    case InitKind::source_copy: return "source_copy";
    case InitKind::random: return "random";
  }
  return "random";
}

InitKind parse_init_kind(const std::string& text) {
  if (text == "contrastive") return InitKind::contrastive;
  if (text == "source_copy") return InitKind::source_copy;
  if (text == "random") return InitKind::random;
  throw ConfigError(fmt::format("unknown student init kind '{}'", text));
}

void ContrastiveConfig::validate() const {
  if (batch_size < 2) throw ConfigError("contrastive batch size must be >= 2");
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  if (embedding_dim == 1) throw ConfigError("contrastive embedding dim must be >= 2");
  if (!(lr >= 0.0)) throw ConfigError("contrastive lr must be non-negative");
}

nlohmann::json ContrastiveConfig::to_json() const {
  return {{"epochs", epochs},          {"batch_size", batch_size},
          {"lr", lr},                  {"momentum", momentum},
          {"weight_decay", weight_decay}, {"temperature", temperature},
          {"embedding_dim", embedding_dim}};
}

ContrastiveConfig ContrastiveConfig::from_json(const nlohmann::json& j) {
  ContrastiveConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.temperature = j.value("temperature", c.temperature);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.validate();
  return c;
}

InitializedStudent pretrain(const ArchSpec& arch, const UnlabeledView& target,
                            const ContrastiveConfig& cfg, const AugmentationPolicy& policy,
                            Rng& rng) {
  cfg.validate();
  policy.validate();
  if (target.dim() != arch.input_dim) {
    throw ShapeError(fmt::format("target width {} does not match architecture {}", target.dim(),
                                 arch.to_string()));
  }
  if (target.size() < 2 * cfg.batch_size) {
    throw ConfigError(fmt::format("contrastive pretraining needs at least {} rows, got {}",
                                  2 * cfg.batch_size, target.size()));
  }
  Rng init_rng = rng.substream("init");
  Rng batch_rng = rng.substream("batches");
  Rng aug_rng = rng.substream("augment");

  Network backbone = Network::build_backbone(arch, init_rng);
  const std::size_t width = backbone.layers().empty() ? arch.input_dim : backbone.output_dim();
  const std::size_t e = cfg.embedding_dim == 0 ? width : cfg.embedding_dim;
  std::vector<Layer> head_layers;
  head_layers.emplace_back(Dense::initialized(width, e, init_rng));
  head_layers.emplace_back(Relu(e));
  head_layers.emplace_back(Dense::initialized(e, std::max<std::size_t>(1, e / 2), init_rng));
  const std::size_t backbone_layers = backbone.layers().size();
  Network encoder = Network::concat(backbone, Network(std::move(head_layers), false));
  encoder.set_mode(Mode::train);

  InitializedStudent out;
  out.provenance = InitKind::contrastive;
  if (cfg.epochs == 0) {
    out.backbone = std::move(backbone);
    out.backbone.set_mode(Mode::eval);
    return out;
  }

  Sgd opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  const std::size_t per_epoch = target.size() / cfg.batch_size;
  const Schedule sched = Schedule::cosine(cfg.lr, 0.0, cfg.epochs * per_epoch);
  auto params = encoder.parameters();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = minibatches(target.size(), cfg.batch_size, batch_rng);
    // Equal-size batches keep the InfoNCE scale comparable across steps.
    batches.resize(per_epoch);
    double total = 0.0;
    for (const auto& batch : batches) {
      const Tensor x = target.features().gather_rows(batch);
      const Tensor v1 = augment(x, policy, AugmentMode::strong, aug_rng);
      const Tensor v2 = augment(x, policy, AugmentMode::strong, aug_rng);
      const Tensor z = encoder.forward(concat_rows(v1, v2));
      const std::size_t n = batch.size();
      const PairLossValue loss = infonce_loss(z.slice_rows(0, n), z.slice_rows(n, 2 * n),
                                              cfg.temperature);
      require_finite(loss.value, "InfoNCE");
      encoder.backward(concat_rows(loss.grad_queries, loss.grad_keys));
      opt.step(params, sched.lr_at(std::min(step, sched.total_steps)));
      ++step;
      total += loss.value;
    }
    out.loss_curve.push_back(total / static_cast<double>(batches.size()));
  }
  encoder.clear_caches();
  out.backbone = encoder.slice(0, backbone_layers, false);
  out.backbone.set_mode(Mode::eval);
  return out;
}

InitializedStudent ContrastiveInitializer::initialize(const ArchSpec& student_arch,
                                                      const UnlabeledView& target,
                                                      Rng& rng) const {
  return pretrain(student_arch, target, cfg_, policy_, rng);
}

InitializedStudent RandomInitializer::initialize(const ArchSpec& student_arch,
                                                 const UnlabeledView& /*target*/,
                                                 Rng& rng) const {
  Rng init_rng = rng.substream("init");
  InitializedStudent out;
  out.backbone = Network::build_backbone(student_arch, init_rng);
  out.backbone.set_mode(Mode::eval);
  out.provenance = InitKind::random;
  return out;
}

InitializedStudent SourceCopyInitializer::initialize(const ArchSpec& student_arch,
                                                     const UnlabeledView& /*target*/,
                                                     Rng& rng) const {
  Rng init_rng = rng.substream("init");
  const Network expected = Network::build_backbone(student_arch, init_rng);
  Network backbone = teacher_.backbone();
  if (!backbone.same_architecture(expected)) {
    throw ArchitectureMismatch("source_copy needs the student architecture to equal the teacher's");
  }
  InitializedStudent out;
  out.backbone = std::move(backbone);
  out.backbone.clear_caches();
  out.backbone.set_mode(Mode::eval);
  out.provenance = InitKind::source_copy;
  return out;
}

Network student_from(const InitializedStudent& init, const ArchSpec& student_arch, Rng& rng) {
  Rng check_rng(0);
  const Network expected = Network::build_backbone(student_arch, check_rng);
  if (!init.backbone.same_architecture(expected)) {
    throw ArchitectureMismatch(
        fmt::format("initialised backbone does not match student architecture {}",
                    student_arch.to_string()));
  }
  Rng head_rng = rng.substream("classifier");
  const std::size_t width = student_arch.feature_dim();
  Network head({Dense::initialized(width, student_arch.num_classes, head_rng)}, true);
  Network student = Network::concat(init.backbone, head);
  student.clear_caches();
  student.set_mode(Mode::train);
  return student;
}

Network make_student(InitKind kind, const Network& teacher, const InitializedStudent* pretrained,
                     const ArchSpec& student_arch, Rng& rng) {
  static const Tensor kNoRows;
  const UnlabeledView no_data(kNoRows, student_arch.num_classes);
  switch (kind) {
    case InitKind::source_copy: {
      const SourceCopyInitializer init(teacher);
      return student_from(init.initialize(student_arch, no_data, rng),
                          student_arch, rng);
    }
    case InitKind::contrastive:
      if (pretrained == nullptr || pretrained->provenance != InitKind::contrastive) {
        throw ConfigError("contrastive student needs a pretrained contrastive backbone");
      }
      return student_from(*pretrained, student_arch, rng);
    case InitKind::random:
      if (pretrained != nullptr && pretrained->provenance == InitKind::random) {
        return student_from(*pretrained, student_arch, rng);
      }
      return student_from(RandomInitializer().initialize(student_arch, no_data, rng),
                          student_arch, rng);
  }
  throw ConfigError("unknown student init kind");
}

}  // namespace ota

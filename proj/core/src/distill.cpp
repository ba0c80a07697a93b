#include "ota/distill.hpp"

#include <fmt/format.h>

#include "ota/error.hpp"
#include "ota/optim.hpp"
#include "ota/training.hpp"

namespace ota {

void PhaseSchedule::validate() const {
  if (num_phases < 1) throw ConfigError("distillation needs at least one phase");
  if (epochs_per_phase < 1 || soft_phase_epochs < 1) {
    throw ConfigError("phase epoch counts must be >= 1");
  }
}

nlohmann::json PhaseSchedule::to_json() const {
  return {{"num_phases", num_phases},
          {"epochs_per_phase", epochs_per_phase},
          {"soft_label_interleave", soft_label_interleave},
          {"soft_phase_epochs", soft_phase_epochs}};
}

PhaseSchedule PhaseSchedule::from_json(const nlohmann::json& j) {
  PhaseSchedule s;
  s.num_phases = j.value("num_phases", s.num_phases);
  s.epochs_per_phase = j.value("epochs_per_phase", s.epochs_per_phase);
  s.soft_label_interleave = j.value("soft_label_interleave", s.soft_label_interleave);
  s.soft_phase_epochs = j.value("soft_phase_epochs", s.soft_phase_epochs);
  s.validate();
  return s;
}

std::string to_string(PhaseMode m) { return m == PhaseMode::hard ? "hard" : "soft"; }

PhaseMode phase_mode(const PhaseSchedule& s, std::size_t phase) {
  return s.soft_label_interleave && phase % 2 == 0 ? PhaseMode::soft : PhaseMode::hard;
}

std::size_t phase_epochs(const PhaseSchedule& s, std::size_t phase) {
  return phase_mode(s, phase) == PhaseMode::soft ? s.soft_phase_epochs : s.epochs_per_phase;
}

void DistillConfig::validate() const {
  schedule.validate();
  if (batch_size < 2) throw ConfigError("distill batch size must be >= 2");
  if (!(lr >= 0.0) || !(min_lr >= 0.0)) throw ConfigError("distill lr must be non-negative");
}

nlohmann::json DistillConfig::to_json() const {
  nlohmann::json j = schedule.to_json();
  j.update({{"batch_size", batch_size},
            {"lr", lr},
            {"min_lr", min_lr},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"resample_weak_view", resample_weak_view}});
  return j;
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
  DistillConfig c;
  c.schedule = PhaseSchedule::from_json(j);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.resample_weak_view = j.value("resample_weak_view", c.resample_weak_view);
  c.validate();
  return c;
}

PseudoLabels pseudo_label(const Network& teacher, const UnlabeledView& target,
                          const AugmentationPolicy& policy, Rng& rng) {
  Network net = teacher;
  const Tensor weak = augment(target.features(), policy, AugmentMode::weak, rng);
  PseudoLabels out;
  out.soft = predict_probs(net, weak);
  out.hard = out.soft.argmax();
  out.teacher_fingerprint = teacher.fingerprint();
  return out;
}

Network run_phase(Network student, const PseudoLabels& labels, const UnlabeledView& target,
                  std::size_t epochs, PhaseMode mode, const DistillConfig& cfg,
                  const AugmentationPolicy& policy, Rng& rng, PhaseStats* stats) {
  cfg.validate();
  if (labels.hard.size() != target.size() || labels.soft.rows() != target.size()) {
    throw ShapeError("pseudo labels are not aligned with the target rows");
  }
  student.set_mode(Mode::train);
  if (epochs == 0) {
    student.set_mode(Mode::eval);
    return student;
  }
  Rng batch_rng = rng.substream("batches");
  Rng aug_rng = rng.substream("augment");
  Sgd opt({cfg.lr, cfg.momentum, cfg.weight_decay});
  const std::size_t per_epoch = (target.size() + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule sched = Schedule::cosine(cfg.lr, cfg.min_lr, std::max<std::size_t>(1, epochs * per_epoch));
  auto params = student.parameters();
  Network last_good = student;
  std::size_t step = 0;
  PhaseStats local;
  for (std::size_t epoch = 0; epoch < epochs && !local.aborted; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : minibatches(target.size(), cfg.batch_size, batch_rng)) {
      try {
        const Tensor x = augment(target.features().gather_rows(batch), policy, AugmentMode::strong,
                                 aug_rng);
        const Probs p = softmax(student.forward(x));
        LossValue loss;
        if (mode == PhaseMode::hard) {
          std::vector<int> y(batch.size());
          for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels.hard[batch[i]];
          loss = cross_entropy(p, y, 0.0);
        } else {
          loss = kl_soft_loss(p, Probs(labels.soft.values().gather_rows(batch)));
        }
        require_finite(loss.value, "distillation");
        student.backward(softmax_backward(p, loss.grad));
        opt.step(params, sched.lr_at(std::min(step, sched.total_steps)));
        ++step;
        total += loss.value * static_cast<double>(batch.size());
        seen += batch.size();
        last_good = student;
      } catch (const NumericalError& e) {
        local.aborted = true;
        local.abort_reason = e.what();
        student = last_good;
        params = student.parameters();
        break;
      }
    }
    if (seen > 0) local.epoch_loss.push_back(total / static_cast<double>(seen));
  }
  student.clear_caches();
  student.set_mode(Mode::eval);
  if (stats != nullptr) *stats = std::move(local);
  return student;
}

nlohmann::json PhaseRecord::to_json() const {
  nlohmann::json j = {{"phase", phase},
                      {"mode", to_string(mode)},
                      {"epochs", epochs},
                      {"teacher_fingerprint", teacher_fingerprint},
                      {"student_start_backbone", student_start_backbone},
                      {"epoch_loss", epoch_loss},
                      {"aborted", aborted}};
  j["label_agreement"] = label_agreement ? nlohmann::json(*label_agreement) : nlohmann::json();
  j["accuracy"] = accuracy ? nlohmann::json(*accuracy) : nlohmann::json();
  return j;
}

nlohmann::json DistillResult::trace_json() const {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& r : trace) phases.push_back(r.to_json());
  return phases;
}

DistillResult distill(const Network& teacher, const InitializedStudent& student_init,
                      const ArchSpec& student_arch, const UnlabeledView& target,
                      const DistillConfig& cfg, const AugmentationPolicy& policy, Rng& rng,
                      const PhaseEvaluator& evaluate) {
  cfg.validate();
  policy.validate();
  if (!teacher.has_classifier()) throw ConfigError("distillation teacher needs a classifier");
  if (teacher.output_dim() != student_arch.num_classes) {
    throw ArchitectureMismatch("teacher and student disagree on the number of classes");
  }
  DistillResult result;
  Network current_teacher = teacher;
  current_teacher.clear_caches();
  std::optional<std::vector<int>> previous;
  Rng fixed_weak_rng = rng.substream("weak_view");
  for (std::size_t phase = 1; phase <= cfg.schedule.num_phases; ++phase) {
    Rng label_rng = cfg.resample_weak_view ? rng.substream("weak_view", phase)
                                           : fixed_weak_rng.substream("fixed");
    PseudoLabels labels = pseudo_label(current_teacher, target, policy, label_rng);
    if (previous) {
      std::size_t same = 0;
      for (std::size_t i = 0; i < labels.hard.size(); ++i) same += labels.hard[i] == (*previous)[i];
      labels.agreement_with_previous = static_cast<double>(same) / static_cast<double>(labels.hard.size());
    }

    Rng student_rng = rng.substream("student", phase);
    Network student = student_from(student_init, student_arch, student_rng);

    PhaseRecord record;
    record.phase = phase;
    record.mode = phase_mode(cfg.schedule, phase);
    record.epochs = phase_epochs(cfg.schedule, phase);
    record.teacher_fingerprint = labels.teacher_fingerprint;
    record.student_start_backbone = student.backbone_fingerprint();
    record.label_agreement = labels.agreement_with_previous;

    PhaseStats stats;
    Rng phase_rng = rng.substream("phase", phase);
    student = run_phase(std::move(student), labels, target, record.epochs, record.mode, cfg, policy,
                        phase_rng, &stats);
    record.epoch_loss = stats.epoch_loss;
    record.aborted = stats.aborted;
    if (evaluate) record.accuracy = evaluate(student);
    result.trace.push_back(std::move(record));

    previous = std::move(labels.hard);
    current_teacher = student;
    if (stats.aborted) break;
  }
  result.student = std::move(current_teacher);
  return result;
}

}  // namespace ota

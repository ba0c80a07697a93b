#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ota/adapt.hpp"
#include "ota/distill.hpp"
#include "ota/error.hpp"
#include "ota/training.hpp"

namespace ota {
namespace {

Tensor rand_mat(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return testing::random_matrix(rows, cols, rng);
}

// Three well-separated classes in 8 dimensions.
Dataset small_data(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.num_classes = 3;
  spec.dim = 8;
  spec.n_per_class = 40;
  spec.signature_dims = 4;
  spec.geometry_seed = 1;
  spec.sample_seed = seed;
  return generate(spec);
}

Network small_teacher() {
  SourceTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  Rng rng(3);
  return train_source(ArchSpec::parse("8-12-3"), small_data(0), cfg, rng);
}

DistillConfig small_distill(std::size_t phases, std::size_t epochs) {
  DistillConfig cfg;
  cfg.schedule.num_phases = phases;
  cfg.schedule.epochs_per_phase = epochs;
  cfg.batch_size = 32;
  return cfg;
}

// A classifier-only network whose logits are its inputs.
Network identity_logits(std::size_t k) {
  Dense d(k, k);
  for (std::size_t i = 0; i < k; ++i) d.weight(i, i) = 1.0;
  return Network({d}, true);
}

TEST(PhaseSchedule, InterleavedModesAndEpochs) {
  PhaseSchedule s;
  s.num_phases = 4;
  s.soft_label_interleave = true;
  for (std::size_t phase = 1; phase <= 4; ++phase) {
    const bool even = phase % 2 == 0;
    EXPECT_EQ(phase_mode(s, phase), even ? PhaseMode::soft : PhaseMode::hard);
    EXPECT_EQ(phase_epochs(s, phase), even ? 1u : 10u);
  }
  s.soft_label_interleave = false;
  for (std::size_t phase = 1; phase <= 4; ++phase) {
    EXPECT_EQ(phase_mode(s, phase), PhaseMode::hard);
    EXPECT_EQ(phase_epochs(s, phase), 10u);
  }
}

TEST(PhaseSchedule, Validation) {
  PhaseSchedule s;
  EXPECT_EQ(s.num_phases, 3u);
  EXPECT_EQ(s.epochs_per_phase, 10u);
  EXPECT_EQ(s.soft_phase_epochs, 1u);
  s.num_phases = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = PhaseSchedule{};
  s.epochs_per_phase = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = PhaseSchedule{};
  s.soft_phase_epochs = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  DistillConfig d;
  d.batch_size = 1;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(PseudoLabel, ArgmaxWithLowestIndexTies) {
  const Network net = identity_logits(3);
  const Tensor logits = Tensor::from_rows({{0.2, 1.5, -0.3}, {1.0, 1.0, 0.0}, {0.0, 2.0, 2.0}});
  Rng rng(0);
  const PseudoLabels labels = pseudo_label(net, UnlabeledView(logits, 3),
                                           AugmentationPolicy::identity(), rng);
  EXPECT_EQ(labels.hard, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(labels.teacher_fingerprint, net.fingerprint());
  EXPECT_FALSE(labels.agreement_with_previous.has_value());

  const Tensor tie = Tensor::from_rows({{1.0, 1.0}});
  const PseudoLabels two = pseudo_label(identity_logits(2), UnlabeledView(tie, 2),
                                        AugmentationPolicy::identity(), rng);
  EXPECT_EQ(two.hard, std::vector<int>{0});
}

TEST(PseudoLabel, HardIsArgmaxOfSoft) {
  const Network teacher = small_teacher();
  const Tensor x = rand_mat(100, 8, 4);
  Rng rng(2);
  const PseudoLabels labels = pseudo_label(teacher, UnlabeledView(x, 3), AugmentationPolicy{}, rng);
  ASSERT_EQ(labels.hard.size(), 100u);
  EXPECT_EQ(labels.hard, labels.soft.argmax());
  for (std::size_t r = 0; r < labels.soft.rows(); ++r) {
    const auto row = labels.soft.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(PseudoLabel, IdentityWeakPolicyMatchesRawPredictions) {
  Network teacher = small_teacher();
  const Tensor x = rand_mat(64, 8, 5);
  Rng rng(1);
  const PseudoLabels labels = pseudo_label(teacher, UnlabeledView(x, 3),
                                           AugmentationPolicy::identity(), rng);
  EXPECT_EQ(labels.hard, predict(teacher, x));
}

TEST(PseudoLabel, DeterministicGivenSeed) {
  const Network teacher = small_teacher();
  const Tensor x = rand_mat(64, 8, 5);
  Rng a(7);
  Rng b(7);
  const PseudoLabels first = pseudo_label(teacher, UnlabeledView(x, 3), AugmentationPolicy{}, a);
  const PseudoLabels second = pseudo_label(teacher, UnlabeledView(x, 3), AugmentationPolicy{}, b);
  EXPECT_EQ(first.hard, second.hard);
  EXPECT_EQ(first.soft.values().storage(), second.soft.values().storage());
}

TEST(RunPhase, ZeroEpochsLeavesStudentUnchanged) {
  const Network teacher = small_teacher();
  const Tensor x = rand_mat(50, 8, 6);
  Rng l(0);
  const PseudoLabels labels = pseudo_label(teacher, UnlabeledView(x, 3), AugmentationPolicy{}, l);
  Rng s(1);
  const Network student = Network::build(ArchSpec::parse("8-6-3"), s);
  Rng rng(2);
  const Network out = run_phase(student, labels, UnlabeledView(x, 3), 0, PhaseMode::hard,
                                small_distill(1, 1), AugmentationPolicy{}, rng);
  EXPECT_EQ(out.fingerprint(), student.fingerprint());
}

TEST(RunPhase, MisalignedLabelsAreRejected) {
  const Network teacher = small_teacher();
  const Tensor x = rand_mat(50, 8, 6);
  const Tensor other = rand_mat(40, 8, 6);
  Rng l(0);
  const PseudoLabels labels = pseudo_label(teacher, UnlabeledView(x, 3), AugmentationPolicy{}, l);
  Rng rng(2);
  EXPECT_THROW(run_phase(teacher, labels, UnlabeledView(other, 3), 1, PhaseMode::hard,
                         small_distill(1, 1), AugmentationPolicy{}, rng),
               ShapeError);
}

// With lr = 0 and identity views the student keeps fitting its own
// predictions. Hard labels give mean -log max_c p (the min-entropy, never above
// the Shannon entropy); soft labels give KL(p || p) = 0.
TEST(RunPhase, SelfConsistencyAtInitialisation) {
  Rng s(4);
  Network student = Network::build(ArchSpec::parse("8-6-3:nobn"), s);
  const Tensor x = rand_mat(64, 8, 8);
  Rng l(0);
  const PseudoLabels own = pseudo_label(student, UnlabeledView(x, 3), AugmentationPolicy::identity(), l);
  double min_entropy = 0.0;
  double shannon = 0.0;
  for (std::size_t r = 0; r < own.soft.rows(); ++r) {
    min_entropy -= std::log(own.soft(r, static_cast<std::size_t>(own.hard[r])));
    for (double p : own.soft.row(r)) shannon -= p * std::log(p);
  }
  min_entropy /= static_cast<double>(own.soft.rows());
  shannon /= static_cast<double>(own.soft.rows());

  DistillConfig cfg = small_distill(1, 1);
  cfg.lr = 0.0;
  cfg.batch_size = 64;
  PhaseStats hard;
  Rng r1(1);
  run_phase(student, own, UnlabeledView(x, 3), 1, PhaseMode::hard, cfg,
            AugmentationPolicy::identity(), r1, &hard);
  ASSERT_EQ(hard.epoch_loss.size(), 1u);
  EXPECT_NEAR(hard.epoch_loss[0], min_entropy, 1e-9);
  EXPECT_LE(hard.epoch_loss[0], shannon);

  PhaseStats soft;
  Rng r2(1);
  run_phase(student, own, UnlabeledView(x, 3), 1, PhaseMode::soft, cfg,
            AugmentationPolicy::identity(), r2, &soft);
  EXPECT_NEAR(soft.epoch_loss[0], 0.0, 1e-9);
}

struct TracedDistill {
  DistillResult result;
  std::vector<std::string> after_phase;
};

TracedDistill traced(const Network& teacher, const InitializedStudent& init, const ArchSpec& arch,
                     const Tensor& x, const DistillConfig& cfg, std::uint64_t seed) {
  TracedDistill t;
  Rng rng(seed);
  t.result = distill(teacher, init, arch, UnlabeledView(x, 3), cfg, AugmentationPolicy{}, rng,
                     [&](Network& student) {
                       t.after_phase.push_back(student.fingerprint());
                       return 0.0;
                     });
  return t;
}

TEST(Distill, ResetsStudentAndPromotesTeacherAcrossArchitectures) {
  const Network teacher = small_teacher();
  const ArchSpec student_arch = ArchSpec::parse("8-6-3");
  const Dataset target = small_data(9);
  Rng i(5);
  const InitializedStudent init = RandomInitializer().initialize(student_arch, target.unlabeled(), i);
  const TracedDistill t = traced(teacher, init, student_arch, target.features, small_distill(3, 2), 11);

  ASSERT_EQ(t.result.trace.size(), 3u);
  ASSERT_EQ(t.after_phase.size(), 3u);
  EXPECT_EQ(t.result.trace[0].teacher_fingerprint, teacher.fingerprint());
  EXPECT_FALSE(t.result.trace[0].label_agreement.has_value());
  for (std::size_t k = 0; k < 3; ++k) {
    const PhaseRecord& rec = t.result.trace[k];
    EXPECT_EQ(rec.phase, k + 1);
    EXPECT_EQ(rec.student_start_backbone, init.backbone.fingerprint()) << "phase " << k + 1;
    EXPECT_EQ(rec.epoch_loss.size(), 2u);
    EXPECT_EQ(rec.accuracy, 0.0);
    if (k > 0) {
      EXPECT_EQ(rec.teacher_fingerprint, t.after_phase[k - 1]) << "phase " << k + 1;
      ASSERT_TRUE(rec.label_agreement.has_value());
      EXPECT_GE(*rec.label_agreement, 0.0);
      EXPECT_LE(*rec.label_agreement, 1.0);
    }
  }
  EXPECT_EQ(t.result.student.fingerprint(), t.after_phase.back());
  EXPECT_TRUE(t.result.student.same_architecture(Network::build(student_arch, i)));
}

TEST(Distill, SinglePhaseIsOneRound) {
  const Network teacher = small_teacher();
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  const Dataset target = small_data(9);
  Rng i(5);
  const InitializedStudent init = RandomInitializer().initialize(arch, target.unlabeled(), i);
  const TracedDistill t = traced(teacher, init, arch, target.features, small_distill(1, 2), 3);
  ASSERT_EQ(t.result.trace.size(), 1u);
  EXPECT_EQ(t.result.trace[0].teacher_fingerprint, teacher.fingerprint());
  EXPECT_EQ(t.result.student.fingerprint(), t.after_phase[0]);
}

TEST(Distill, InterleavedScheduleIsLogged) {
  const Network teacher = small_teacher();
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  const Dataset target = small_data(9);
  Rng i(5);
  const InitializedStudent init = RandomInitializer().initialize(arch, target.unlabeled(), i);
  DistillConfig cfg = small_distill(5, 3);
  cfg.schedule.soft_label_interleave = true;
  const TracedDistill t = traced(teacher, init, arch, target.features, cfg, 3);
  ASSERT_EQ(t.result.trace.size(), 5u);
  for (const PhaseRecord& rec : t.result.trace) {
    const bool soft = rec.phase % 2 == 0;
    EXPECT_EQ(rec.mode, soft ? PhaseMode::soft : PhaseMode::hard);
    EXPECT_EQ(rec.epochs, soft ? 1u : 3u);
    EXPECT_EQ(rec.epoch_loss.size(), rec.epochs);
  }
  const nlohmann::json j = t.result.trace_json();
  EXPECT_EQ(j[1]["mode"], "soft");
  EXPECT_EQ(j[2]["mode"], "hard");
}

TEST(Distill, Deterministic) {
  const Network teacher = small_teacher();
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  const Dataset target = small_data(9);
  Rng i(5);
  const InitializedStudent init = RandomInitializer().initialize(arch, target.unlabeled(), i);
  const TracedDistill a = traced(teacher, init, arch, target.features, small_distill(2, 2), 8);
  const TracedDistill b = traced(teacher, init, arch, target.features, small_distill(2, 2), 8);
  const TracedDistill c = traced(teacher, init, arch, target.features, small_distill(2, 2), 9);
  EXPECT_EQ(a.result.student.fingerprint(), b.result.student.fingerprint());
  EXPECT_EQ(a.result.trace_json(), b.result.trace_json());
  EXPECT_NE(a.result.student.fingerprint(), c.result.student.fingerprint());
}

TEST(Distill, ClassCountMismatchIsRejected) {
  const Network teacher = small_teacher();
  const ArchSpec arch = ArchSpec::parse("8-6-4");
  const Dataset target = small_data(9);
  Rng i(5);
  const InitializedStudent init = RandomInitializer().initialize(arch, target.unlabeled(), i);
  Rng rng(0);
  EXPECT_THROW(distill(teacher, init, arch, target.unlabeled(), small_distill(1, 1),
                       AugmentationPolicy{}, rng),
               ArchitectureMismatch);
}

// The pipeline's teacher and contrastive student; phase 1 trains on the target
// and agreement is measured on a fresh draw from the shifted distribution.
TEST(DistillDefaultBenchmark, FirstPhaseFitsTeacherOnHeldOutRows) {
  ExperimentConfig cfg = testing::default_config();
  cfg.benchmark.eval_split = EvalSplit::heldout;
  const BenchmarkData data = build_benchmark(cfg, 0);
  const UnlabeledView target = data.target.unlabeled();
  Rng a = Rng(0).substream("stage1");
  Network teacher = adapt(testing::default_source_model(0), target, cfg.adapt, a).first;
  Rng p = Rng(0).substream("stage2");
  const InitializedStudent init = pretrain(cfg.student_arch, target, cfg.pretrain, cfg.augment, p);
  DistillConfig dc = cfg.distill;
  dc.schedule.num_phases = 1;
  Rng rng = Rng(0).substream("stage3");
  DistillResult r = distill(teacher, init, cfg.student_arch, target, dc, cfg.augment, rng);
  const std::vector<int> want = predict(teacher, data.eval.features);
  const std::vector<int> got = predict(r.student, data.eval.features);
  std::size_t same = 0;
  for (std::size_t k = 0; k < want.size(); ++k) same += want[k] == got[k];
  EXPECT_GE(static_cast<double>(same) / static_cast<double>(want.size()), 0.80);
}

TEST(Calibrate, UnitScalesAreIdentity) {
  const Network model = small_teacher();
  const Network same = apply_scales(model, ScaleVector{{1.0, 1.0, 1.0}});
  EXPECT_EQ(same.fingerprint(), model.fingerprint());
}

TEST(Calibrate, SharedScalingKeepsArgmaxWithZeroBias) {
  Network model = small_teacher();
  for (double& b : model.classifier().bias.storage()) b = 0.0;
  Network doubled = apply_scales(model, ScaleVector{{2.0, 2.0, 2.0}});
  const Tensor x = rand_mat(200, 8, 3);
  EXPECT_EQ(predict(doubled, x), predict(model, x));
}

TEST(Calibrate, ScaleValidation) {
  const Network model = small_teacher();
  EXPECT_THROW(apply_scales(model, ScaleVector{{1.0, 1.0}}), ShapeError);
  EXPECT_THROW(apply_scales(model, ScaleVector{{1.0, 0.0, 1.0}}), ConfigError);
  EXPECT_THROW(apply_scales(model, ScaleVector{{1.0, -2.0, 1.0}}), ConfigError);
}

TEST(Calibrate, OnlyScalesChange) {
  const Network model = small_teacher();
  const std::string before = model.fingerprint();
  const Dataset target = small_data(9);
  CalibrateConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.lr = 0.05;
  Rng rng(2);
  const CalibrationResult r = calibrate_classifier(model, target.unlabeled(), cfg, AugmentationPolicy{}, rng);
  EXPECT_EQ(model.fingerprint(), before);
  ASSERT_EQ(r.scales.s.size(), 3u);
  for (double s : r.scales.s) EXPECT_GT(s, 0.0);
  EXPECT_EQ(r.round_loss.size(), cfg.rounds);
  EXPECT_EQ(r.round_agreement.size(), cfg.rounds - 1);
  EXPECT_EQ(r.model.backbone_fingerprint(), model.backbone_fingerprint());
  EXPECT_EQ(r.model.classifier().bias.storage(), model.classifier().bias.storage());
  EXPECT_EQ(r.model.fingerprint(), apply_scales(model, r.scales).fingerprint());
  EXPECT_NE(r.model.fingerprint(), model.fingerprint());

  Rng again(2);
  const CalibrationResult r2 = calibrate_classifier(model, target.unlabeled(), cfg, AugmentationPolicy{}, again);
  EXPECT_EQ(r2.scales.s, r.scales.s);
}

}  // namespace
}  // namespace ota

#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ota/error.hpp"
#include "ota/experiment.hpp"
#include "ota/selfsup.hpp"

namespace ota {
namespace {

template <class V>
concept ExposesLabels = requires(const V& v) { v.labels; } ||
                        requires(const V& v) { v.labels(); } ||
                        requires(const V& v) { v.label_values(); };

static_assert(ExposesLabels<Dataset>);
static_assert(!ExposesLabels<UnlabeledView>);

Tensor rand_mat(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return testing::random_matrix(rows, cols, rng);
}

ContrastiveConfig tiny_contrastive(std::size_t epochs) {
  ContrastiveConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.embedding_dim = 8;
  return c;
}

TEST(Pretrain, ZeroEpochsEqualsRandomInit) {
  const Tensor x = rand_mat(64, 8, 1);
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  Rng a(4);
  Rng b(4);
  const InitializedStudent pre = pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(0),
                                          AugmentationPolicy{}, a);
  const InitializedStudent rnd = RandomInitializer().initialize(arch, UnlabeledView(x, 3), b);
  EXPECT_EQ(pre.backbone.fingerprint(), rnd.backbone.fingerprint());
  EXPECT_EQ(pre.provenance, InitKind::contrastive);
  EXPECT_TRUE(pre.loss_curve.empty());
}

TEST(Pretrain, ReturnsBackboneWithoutHead) {
  const Tensor x = rand_mat(64, 8, 2);
  const ArchSpec arch = ArchSpec::parse("8-6-5-3");
  Rng rng(1);
  const InitializedStudent pre = pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(3),
                                          AugmentationPolicy{}, rng);
  EXPECT_FALSE(pre.backbone.has_classifier());
  EXPECT_EQ(pre.backbone.output_dim(), 5u);
  Rng check(0);
  EXPECT_TRUE(pre.backbone.same_architecture(Network::build_backbone(arch, check)));
  EXPECT_EQ(pre.loss_curve.size(), 3u);
  for (double v : pre.loss_curve) EXPECT_TRUE(std::isfinite(v));
}

TEST(Pretrain, Deterministic) {
  const Tensor x = rand_mat(64, 8, 3);
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  Rng a(2);
  Rng b(2);
  Rng c(3);
  const auto first = pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(2), AugmentationPolicy{}, a);
  const auto second = pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(2), AugmentationPolicy{}, b);
  const auto third = pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(2), AugmentationPolicy{}, c);
  EXPECT_EQ(first.backbone.fingerprint(), second.backbone.fingerprint());
  EXPECT_EQ(first.loss_curve, second.loss_curve);
  EXPECT_NE(first.backbone.fingerprint(), third.backbone.fingerprint());
}

TEST(Pretrain, Errors) {
  const Tensor x = rand_mat(31, 8, 3);
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  Rng rng(0);
  EXPECT_THROW(pretrain(arch, UnlabeledView(x, 3), tiny_contrastive(1), AugmentationPolicy{}, rng),
               ConfigError);
  const Tensor wide = rand_mat(64, 9, 3);
  EXPECT_THROW(pretrain(arch, UnlabeledView(wide, 3), tiny_contrastive(1), AugmentationPolicy{}, rng),
               ShapeError);
  ContrastiveConfig bad = tiny_contrastive(1);
  bad.temperature = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_contrastive(1);
  bad.embedding_dim = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_contrastive(1);
  bad.batch_size = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_init_kind("moco"), ConfigError);
}

TEST(MakeStudent, SourceCopyKeepsTeacherBackbone) {
  const ArchSpec arch = ArchSpec::parse("8-6-5-3");
  Rng t(1);
  Network teacher = Network::build(arch, t);
  teacher.set_mode(Mode::eval);
  Rng rng(2);
  Network student = make_student(InitKind::source_copy, teacher, nullptr, arch, rng);
  EXPECT_EQ(student.backbone_fingerprint(), teacher.backbone_fingerprint());
  EXPECT_NE(student.classifier_fingerprint(), teacher.classifier_fingerprint());
  const Tensor x = rand_mat(12, 8, 5);
  Network sb = student.backbone();
  Network tb = teacher.backbone();
  sb.set_mode(Mode::eval);
  EXPECT_EQ(sb.forward(x).storage(), tb.forward(x).storage());
}

TEST(MakeStudent, SourceCopyNeedsMatchingArchitecture) {
  Rng t(1);
  const Network teacher = Network::build(ArchSpec::parse("8-6-3"), t);
  Rng rng(2);
  EXPECT_THROW(make_student(InitKind::source_copy, teacher, nullptr, ArchSpec::parse("8-4-3"), rng),
               ArchitectureMismatch);
}

TEST(MakeStudent, RandomIsSeedDeterministic) {
  const ArchSpec arch = ArchSpec::parse("8-6-3");
  Rng t(1);
  const Network teacher = Network::build(arch, t);
  Rng a(5);
  Rng b(5);
  Rng c(6);
  const Network first = make_student(InitKind::random, teacher, nullptr, arch, a);
  const Network second = make_student(InitKind::random, teacher, nullptr, arch, b);
  const Network third = make_student(InitKind::random, teacher, nullptr, arch, c);
  EXPECT_EQ(first.fingerprint(), second.fingerprint());
  EXPECT_NE(first.fingerprint(), third.fingerprint());
  EXPECT_EQ(first.output_dim(), 3u);
}

TEST(MakeStudent, ContrastiveUsesPretrainedBackboneAndFreshHead) {
  const ArchSpec teacher_arch = ArchSpec::parse("8-12-3");
  const ArchSpec student_arch = ArchSpec::parse("8-6-3");
  Rng t(1);
  const Network teacher = Network::build(teacher_arch, t);
  const Tensor x = rand_mat(64, 8, 7);
  Rng p(3);
  const InitializedStudent pre = pretrain(student_arch, UnlabeledView(x, 3), tiny_contrastive(2),
                                          AugmentationPolicy{}, p);
  Rng rng(4);
  const Network student = make_student(InitKind::contrastive, teacher, &pre, student_arch, rng);
  EXPECT_EQ(student.backbone_fingerprint(), pre.backbone.fingerprint());
  EXPECT_TRUE(student.has_classifier());
  EXPECT_EQ(student.classifier().in_dim(), 6u);
  EXPECT_EQ(student.classifier().out_dim(), 3u);

  Rng r2(4);
  EXPECT_THROW(make_student(InitKind::contrastive, teacher, nullptr, student_arch, r2), ConfigError);
  Rng r3(0);
  const InitializedStudent rnd = RandomInitializer().initialize(student_arch, UnlabeledView(x, 3), r3);
  EXPECT_THROW(make_student(InitKind::contrastive, teacher, &rnd, student_arch, r2), ConfigError);
  const ArchSpec other = ArchSpec::parse("8-7-3");
  EXPECT_THROW(make_student(InitKind::contrastive, teacher, &pre, other, r2), ArchitectureMismatch);
}

// Default benchmark, 50-epoch pretraining, shared across the tests below.
const InitializedStudent& default_pretrain(std::uint64_t seed) {
  static std::map<std::uint64_t, InitializedStudent> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    const ExperimentConfig& cfg = testing::default_config();
    ContrastiveConfig cc = cfg.pretrain;
    cc.epochs = 50;
    Rng rng = Rng(seed).substream("stage2");
    it = cache.emplace(seed, pretrain(cfg.student_arch, testing::default_benchmark(seed).target.unlabeled(),
                                      cc, cfg.augment, rng))
             .first;
  }
  return it->second;
}

double random_backbone_probe(std::uint64_t seed) {
  const ExperimentConfig& cfg = testing::default_config();
  const Dataset& target = testing::default_benchmark(seed).target;
  Rng rng = Rng(seed).substream("stage3.fallback_init");
  const InitializedStudent rnd = RandomInitializer().initialize(cfg.student_arch, target.unlabeled(), rng);
  return testing::probe_accuracy(rnd.backbone, target);
}

TEST(PretrainDefaultBenchmark, LossDropsAtLeastThirtyPercent) {
  std::vector<double> reductions;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto& curve = default_pretrain(seed).loss_curve;
    ASSERT_EQ(curve.size(), 50u);
    reductions.push_back(1.0 - curve.back() / curve.front());
  }
  EXPECT_GE(median(reductions), 0.30);
}

TEST(PretrainDefaultBenchmark, ProbeBeatsRandomBackbone) {
  std::vector<double> gaps;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset& target = testing::default_benchmark(seed).target;
    gaps.push_back(testing::probe_accuracy(default_pretrain(seed).backbone, target) -
                   random_backbone_probe(seed));
  }
  EXPECT_GE(median(gaps), 0.15);
}

// Identical views make the positive pair trivially recognisable, so the
// InfoNCE loss falls well below ln B instead of staying near it. The useful
// control is the representation: it should be no better than random features.
TEST(PretrainDefaultBenchmark, IdentityAugmentationLearnsNothingUseful) {
  const ExperimentConfig& cfg = testing::default_config();
  const std::uint64_t seed = 0;
  const Dataset& target = testing::default_benchmark(seed).target;
  ContrastiveConfig cc = cfg.pretrain;
  cc.epochs = 10;
  Rng rng = Rng(seed).substream("stage2");
  const InitializedStudent ident =
      pretrain(cfg.student_arch, target.unlabeled(), cc, AugmentationPolicy::identity(), rng);
  const double ln_b = std::log(static_cast<double>(cc.batch_size));
  EXPECT_LT(ident.loss_curve.back(), 0.5 * ln_b);

  const double ident_probe = testing::probe_accuracy(ident.backbone, target);
  const double random_probe = random_backbone_probe(seed);
  const double contrastive_probe = testing::probe_accuracy(default_pretrain(seed).backbone, target);
  EXPECT_LT(ident_probe, random_probe + 0.03);
  EXPECT_GE(contrastive_probe - ident_probe, 0.15);
}

}  // namespace
}  // namespace ota

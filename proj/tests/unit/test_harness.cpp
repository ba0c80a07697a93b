#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "ota/checkpoint.hpp"
#include "ota/config.hpp"
#include "ota/error.hpp"
#include "ota/experiment.hpp"
#include "ota/metrics.hpp"

namespace ota {
namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ota_harness" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// A pipeline small enough to run several times per test.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.benchmark.n_source_per_class = 30;
  cfg.benchmark.n_target_per_class = 30;
  cfg.source.epochs = 3;
  cfg.source.batch_size = 64;
  cfg.adapt.epochs = 1;
  cfg.adapt.batch_size = 64;
  cfg.pretrain.epochs = 2;
  cfg.pretrain.batch_size = 64;
  cfg.distill.schedule.num_phases = 2;
  cfg.distill.schedule.epochs_per_phase = 1;
  cfg.distill.batch_size = 64;
  cfg.calibrate.rounds = 2;
  cfg.calibrate.epochs = 1;
  cfg.seeds = {0, 1};
  return cfg;
}

TEST(Metrics, CountingExample) {
  const std::vector<int> labels{0, 0, 1, 1, 1, 1};
  const std::vector<int> preds{0, 1, 1, 1, 1, 1};
  const MetricsReport m = metrics_from_predictions(preds, labels, 2);
  EXPECT_DOUBLE_EQ(m.acc, 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.avg, 0.75);
  EXPECT_EQ(m.class_counts, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(m.correct, (std::vector<std::size_t>{1, 4}));
  EXPECT_DOUBLE_EQ(m.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(m.per_class[1], 1.0);
}

TEST(Metrics, AllCorrect) {
  const std::vector<int> labels{2, 0, 1, 1, 2};
  const MetricsReport m = metrics_from_predictions(labels, labels, 3);
  EXPECT_EQ(m.acc, 1.0);
  EXPECT_EQ(m.avg, 1.0);
}

TEST(Metrics, AbsentClassesDoNotEnterTheAverage) {
  const std::vector<int> labels{0, 0, 2};
  const std::vector<int> preds{0, 1, 2};
  const MetricsReport m = metrics_from_predictions(preds, labels, 4);
  EXPECT_DOUBLE_EQ(m.avg, (0.5 + 1.0) / 2.0);
}

TEST(Metrics, Errors) {
  const std::vector<int> none;
  EXPECT_THROW(metrics_from_predictions(none, none, 2), ConfigError);
  const std::vector<int> labels{0, 3};
  EXPECT_THROW(metrics_from_predictions(labels, labels, 3), ConfigError);
  const std::vector<int> short_preds{0};
  const std::vector<int> two{0, 1};
  EXPECT_THROW(metrics_from_predictions(short_preds, two, 2), ShapeError);
}

TEST(Metrics, AvgEqualsAccOnBalancedSets) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.index(6);
    const std::size_t per = 1 + rng.index(20);
    std::vector<int> labels;
    for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), per, static_cast<int>(c));
    std::vector<int> preds(labels.size());
    for (auto& p : preds) p = static_cast<int>(rng.index(k));
    const MetricsReport m = metrics_from_predictions(preds, labels, k);
    EXPECT_NEAR(m.avg, m.acc, 1e-12);
  }
}

TEST(Metrics, RowOrderInvariance) {
  GeneratorSpec spec;
  spec.num_classes = 4;
  spec.dim = 8;
  spec.n_per_class = 25;
  spec.signature_dims = 4;
  const Dataset data = generate(spec);
  Rng net_rng(2);
  Network net = Network::build(ArchSpec::parse("8-6-4"), net_rng);
  net.set_mode(Mode::eval);

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle(5);
  std::shuffle(perm.begin(), perm.end(), shuffle.engine());
  Dataset permuted = data;
  permuted.features = data.features.gather_rows(perm);
  permuted.latent.reset();
  std::vector<int> y;
  for (std::size_t r : perm) y.push_back(data.label_values()[r]);
  permuted.labels = y;

  const MetricsReport a = evaluate(net, data);
  const MetricsReport b = evaluate(net, permuted);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Metrics, BucketsFollowTrainCounts) {
  const ClassBuckets buckets = ClassBuckets::from_counts({500, 30, 5});
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const std::vector<int> preds{0, 0, 1, 0, 0, 0};
  const MetricsReport m = metrics_from_predictions(preds, labels, 3, &buckets);
  EXPECT_DOUBLE_EQ(m.buckets.at("many"), 1.0);
  EXPECT_DOUBLE_EQ(m.buckets.at("medium"), 0.5);
  EXPECT_DOUBLE_EQ(m.buckets.at("few"), 0.0);
}

TEST(Metrics, JsonRoundTripOmitsRuntime) {
  const std::vector<int> labels{0, 1, 1};
  MetricsReport m = metrics_from_predictions(std::vector<int>{0, 0, 1}, labels, 2);
  m.runtime_seconds = 12.5;
  m.seed = 4;
  const nlohmann::json j = m.to_json();
  EXPECT_FALSE(j.contains("runtime_seconds"));
  const MetricsReport back = MetricsReport::from_json(j);
  EXPECT_EQ(back.to_json(), j);
}

TEST(Summary, MedianAndInterquartileRange) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_DOUBLE_EQ(interquartile_range({5.0, 1.0, 4.0, 2.0, 3.0}), 2.0);
  EXPECT_DOUBLE_EQ(interquartile_range({7.0}), 0.0);
}

TEST(Config, OverridesReachNestedKeys) {
  nlohmann::json tree = ExperimentConfig{}.to_json();
  apply_override(tree, "adapt.lr=0.5");
  apply_override(tree, "stages.stage2=false");
  apply_override(tree, "adapt.update_set=batchnorm_only");
  apply_override(tree, "seeds=[7,8]");
  apply_override(tree, "benchmark.shift.magnitude=30");
  const ExperimentConfig cfg = ExperimentConfig::from_json(tree);
  EXPECT_EQ(cfg.adapt.lr, 0.5);
  EXPECT_FALSE(cfg.stages.stage2);
  EXPECT_EQ(cfg.adapt.update_set, UpdateSet::batchnorm_only);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(cfg.benchmark.shift.magnitude, 30.0);
  EXPECT_THROW(apply_override(tree, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(tree, "adapt..lr=1"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig cfg = tiny_config();
  cfg.stages.calibrate = true;
  cfg.fallback_init = InitKind::source_copy;
  const nlohmann::json j = cfg.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);
}

TEST(Config, InvalidValuesAreConfigErrors) {
  nlohmann::json tree = ExperimentConfig{}.to_json();
  apply_override(tree, "adapt.update_set=all");
  EXPECT_THROW(ExperimentConfig::from_json(tree), ConfigError);
  tree = ExperimentConfig{}.to_json();
  apply_override(tree, "adapt.batch_size=\"many\"");
  EXPECT_THROW(ExperimentConfig::from_json(tree), ConfigError);
  ExperimentConfig cfg;
  cfg.student_arch = ArchSpec::parse("32-16-5");
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ExperimentConfig{};
  cfg.seeds.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, FileWithOverrides) {
  const auto dir = temp_dir("config");
  write_text_file(dir / "cfg.json", R"({"adapt": {"epochs": 2}, "seeds": [3]})");
  const ExperimentConfig cfg = load_experiment_config(dir / "cfg.json", {"adapt.epochs=4"});
  EXPECT_EQ(cfg.adapt.epochs, 4u);
  EXPECT_EQ(cfg.seeds, std::vector<std::uint64_t>{3});
  EXPECT_EQ(cfg.distill.schedule.num_phases, 3u);
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), IoError);
  write_text_file(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_experiment_config(dir / "bad.json"), ConfigError);
}

TEST(Config, StageLabels) {
  StageToggles s{false, false, false, false};
  EXPECT_EQ(s.label(), "source-only");
  s.stage1 = true;
  EXPECT_EQ(s.label(), "1");
  s.stage3 = true;
  EXPECT_EQ(s.label(), "1+3");
  s.stage2 = true;
  EXPECT_EQ(s.label(), "1+2+3");
  s.calibrate = true;
  EXPECT_EQ(s.label(), "1+2+3+cal");
}

nlohmann::json fake_report(const std::string& label, double acc, std::size_t phases) {
  nlohmann::json summary;
  summary["final_stage"] = "final";
  summary["stages"]["final"] = {{"acc", {{"median", acc}, {"iqr", 0.0}, {"n", 5}}},
                                {"avg", {{"median", acc - 0.01}, {"iqr", 0.0}, {"n", 5}}}};
  summary["phases"] = nlohmann::json::array();
  for (std::size_t p = 0; p < phases; ++p) {
    summary["phases"].push_back(
        {{"phase", p + 1}, {"accuracy", {{"median", 0.5 + 0.1 * static_cast<double>(p)}, {"iqr", 0.0}, {"n", 5}}}});
  }
  return {{"schema_version", kReportSchemaVersion}, {"label", label}, {"summary", summary}};
}

TEST(Compare, SingleReportIsOneRow) {
  const ComparisonTable t = compare({fake_report("1", 0.8, 0)});
  ASSERT_EQ(t.row_labels.size(), 1u);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"acc", "avg"}));
  EXPECT_EQ(t.to_text(), "stages    acc    avg\n1       80.00  79.00\n");
}

TEST(Compare, DisjointMetricsRenderAsDash) {
  const ComparisonTable t = compare({fake_report("1+3", 0.9, 2), fake_report("1", 0.8, 0)});
  ASSERT_EQ(t.row_labels, (std::vector<std::string>{"1", "1+3"}));
  EXPECT_EQ(t.columns, (std::vector<std::string>{"acc", "avg", "phase_1", "phase_2"}));
  EXPECT_FALSE(t.cells[0][2].has_value());
  EXPECT_DOUBLE_EQ(*t.cells[1][3], 0.6);
  const std::string text = t.to_text();
  EXPECT_NE(text.find("—"), std::string::npos);
  EXPECT_NE(t.to_csv().find("1,0.8,0.79,,\n"), std::string::npos);
}

TEST(Compare, SortsByStageCountThenLabel) {
  const ComparisonTable t = compare({fake_report("1+2+3", 0.95, 3), fake_report("1", 0.8, 0),
                                     fake_report("source-only", 0.6, 0), fake_report("1+3", 0.9, 3)});
  EXPECT_EQ(t.row_labels, (std::vector<std::string>{"source-only", "1", "1+3", "1+2+3"}));
}

TEST(Compare, SchemaMismatchIsRejected) {
  nlohmann::json r = fake_report("1", 0.8, 0);
  r["schema_version"] = kReportSchemaVersion + 1;
  EXPECT_THROW(compare({r}), FormatError);
  nlohmann::json missing = fake_report("1", 0.8, 0);
  missing.erase("schema_version");
  EXPECT_THROW(compare({missing}), FormatError);
}

TEST(RunExperiment, AllStagesOffIsSourceOnly) {
  ExperimentConfig cfg = tiny_config();
  cfg.stages = StageToggles{false, false, false, false};
  cfg.seeds = {0};
  const ExperimentResult r = run_experiment(cfg);
  EXPECT_EQ(r.label, "source-only");
  ASSERT_EQ(r.seeds.size(), 1u);
  ASSERT_TRUE(r.seeds[0].ok) << r.seeds[0].error;
  ASSERT_EQ(r.seeds[0].stages.size(), 1u);
  EXPECT_EQ(r.seeds[0].stages[0].name, "source");
  EXPECT_EQ(r.summary["final_stage"], "source");
  EXPECT_TRUE(r.seeds[0].distill_trace.empty());
}

TEST(RunExperiment, StagesRunInOrderAndPersistCheckpoints) {
  ExperimentConfig cfg = tiny_config();
  cfg.stages.calibrate = true;
  cfg.seeds = {3};
  const auto dir = temp_dir("order");
  cfg.output_dir = dir.string();
  const ExperimentResult r = run_experiment(cfg);
  ASSERT_TRUE(r.seeds[0].ok) << r.seeds[0].error;
  std::vector<std::string> names;
  for (const auto& s : r.seeds[0].stages) names.push_back(s.name);
  EXPECT_EQ(names, (std::vector<std::string>{"source", "stage1", "stage3", "calibrate"}));
  EXPECT_EQ(r.seeds[0].distill_trace.size(), 2u);
  for (const char* f : {"source", "adapted", "backbone", "student", "calibrated"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "seed_3" / (std::string(f) + ".ckpt"))) << f;
  }
  for (const char* f : {"report.json", "per_class.csv", "trace.csv", "timing.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_TRUE(load_checkpoint(dir / "seed_3" / "backbone.ckpt").backbone_only());
  const nlohmann::json report = read_json_file(dir / "report.json");
  EXPECT_EQ(report["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(report["label"], "1+2+3+cal");
  EXPECT_EQ(report["summary"]["stages"]["stage1"]["acc"]["n"], 1);
  const std::string per_class = slurp(dir / "per_class.csv");
  EXPECT_EQ(per_class.rfind("seed,stage,class", 0), 0u);
}

TEST(RunExperiment, ReportsAreByteIdenticalAcrossRunsAndThreadCounts) {
  ExperimentConfig cfg = tiny_config();
  const auto dir = temp_dir("determinism");
  cfg.output_dir = dir.string();
  cfg.save_checkpoints = false;
  std::vector<std::string> first;
  run_experiment(cfg);
  for (const char* f : {"report.json", "per_class.csv", "trace.csv"}) first.push_back(slurp(dir / f));
  setenv("OTA_THREADS", "1", 1);
  run_experiment(cfg);
  unsetenv("OTA_THREADS");
  std::size_t i = 0;
  for (const char* f : {"report.json", "per_class.csv", "trace.csv"}) EXPECT_EQ(slurp(dir / f), first[i++]) << f;
}

TEST(RunExperiment, DisablingStageTwoLeavesStageOneUntouched) {
  ExperimentConfig with = tiny_config();
  ExperimentConfig without = tiny_config();
  without.stages.stage2 = false;
  const ExperimentResult a = run_experiment(with);
  const ExperimentResult b = run_experiment(without);
  for (std::size_t i = 0; i < a.seeds.size(); ++i) {
    EXPECT_EQ(a.seeds[i].fingerprints["source"], b.seeds[i].fingerprints["source"]);
    EXPECT_EQ(a.seeds[i].fingerprints["stage1"], b.seeds[i].fingerprints["stage1"]);
    EXPECT_EQ(a.seeds[i].stage("stage1")->metrics.to_json(), b.seeds[i].stage("stage1")->metrics.to_json());
    EXPECT_NE(a.seeds[i].fingerprints["stage3"], b.seeds[i].fingerprints["stage3"]);
  }
}

TEST(RunExperiment, LoadsStageZeroCheckpoints) {
  ExperimentConfig cfg = tiny_config();
  const auto dir = temp_dir("from_ckpt");
  cfg.output_dir = dir.string();
  const ExperimentResult trained = run_experiment(cfg);

  ExperimentConfig reuse = tiny_config();
  reuse.source_checkpoint = (dir / "seed_{seed}" / "source.ckpt").string();
  const ExperimentResult loaded = run_experiment(reuse);
  for (std::size_t i = 0; i < trained.seeds.size(); ++i) {
    ASSERT_TRUE(loaded.seeds[i].ok) << loaded.seeds[i].error;
    EXPECT_EQ(loaded.seeds[i].fingerprints, trained.seeds[i].fingerprints);
    EXPECT_TRUE(loaded.seeds[i].source_loss.empty());
  }
}

TEST(RunExperiment, SeedErrorsAreRecordedAndOtherSeedsProceed) {
  ExperimentConfig cfg = tiny_config();
  const auto dir = temp_dir("partial");
  cfg.seeds = {0};
  cfg.output_dir = dir.string();
  run_experiment(cfg);

  ExperimentConfig broken = tiny_config();
  broken.seeds = {0, 1};
  broken.source_checkpoint = (dir / "seed_{seed}" / "source.ckpt").string();
  const ExperimentResult r = run_experiment(broken);
  EXPECT_TRUE(r.seeds[0].ok) << r.seeds[0].error;
  EXPECT_FALSE(r.seeds[1].ok);
  EXPECT_EQ(r.seeds[1].error_code, 3);
  EXPECT_FALSE(r.seeds[1].error.empty());
  EXPECT_EQ(r.summary["failed_seeds"], 1);
  EXPECT_EQ(r.summary["stages"]["stage3"]["acc"]["n"], 1);
  EXPECT_EQ(r.report_json(broken)["seeds"][1]["status"], "error");
}

TEST(RunExperiment, ContrastiveFallbackIsAConfigError) {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {0};
  cfg.stages.stage2 = false;
  cfg.fallback_init = InitKind::contrastive;
  const ExperimentResult r = run_experiment(cfg);
  EXPECT_FALSE(r.seeds[0].ok);
  EXPECT_EQ(r.seeds[0].error_code, 1);
}

}  // namespace
}  // namespace ota

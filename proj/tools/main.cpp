#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ota/adapt.hpp"
#include "ota/checkpoint.hpp"
#include "ota/config.hpp"
#include "ota/distill.hpp"
#include "ota/error.hpp"
#include "ota/experiment.hpp"
#include "ota/metrics.hpp"
#include "ota/selfsup.hpp"
#include "ota/shiftbench.hpp"
#include "ota/training.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. adapt.epochs=3");
  cmd->add_option("--seed", c.seed, "Random seed");
}

ota::ExperimentConfig load_config(const Common& c) {
  if (c.config.empty()) {
    nlohmann::json tree = ota::ExperimentConfig{}.to_json();
    for (const auto& o : c.overrides) ota::apply_override(tree, o);
    return ota::ExperimentConfig::from_json(tree);
  }
  return ota::load_experiment_config(c.config, c.overrides);
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

ota::Network load_model(const std::string& path) {
  ota::Checkpoint ckpt = ota::load_checkpoint(path);
  if (ckpt.backbone_only()) throw ota::ConfigError(fmt::format("'{}' has no classifier", path));
  return std::move(ckpt.network);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-target adaptation pipeline on synthetic shift benchmarks"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  std::string gen_out, gen_domain = "source", gen_shift_kind;
  std::optional<double> gen_magnitude, gen_imbalance;
  std::optional<std::size_t> gen_n;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a source or shifted target dataset");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--out", gen_out, "Output dataset file")->required();
  gen_cmd->add_option("--domain", gen_domain, "source or target")->check(CLI::IsMember({"source", "target"}));
  gen_cmd->add_option("--n-per-class", gen_n, "Samples per class");
  gen_cmd->add_option("--shift", gen_shift_kind, "Shift kind for the target domain");
  gen_cmd->add_option("--magnitude", gen_magnitude, "Shift magnitude");
  gen_cmd->add_option("--imbalance", gen_imbalance, "Long-tail ratio applied to source data");

  // train-source
  Common ts;
  std::string ts_data, ts_out, ts_arch;
  auto* ts_cmd = app.add_subcommand("train-source", "Stage 0: supervised training on labeled source data");
  add_common(ts_cmd, ts);
  ts_cmd->add_option("--data", ts_data, "Labeled source dataset")->required();
  ts_cmd->add_option("--out", ts_out, "Output checkpoint")->required();
  ts_cmd->add_option("--arch", ts_arch, "Architecture, e.g. 32-64-64-10");

  // adapt
  Common ad;
  std::string ad_source, ad_target, ad_out;
  auto* ad_cmd = app.add_subcommand("adapt", "Stage 1: InfoMax adaptation with a frozen classifier");
  add_common(ad_cmd, ad);
  ad_cmd->add_option("--source", ad_source, "Source model checkpoint")->required();
  ad_cmd->add_option("--target", ad_target, "Target dataset")->required();
  ad_cmd->add_option("--out", ad_out, "Output checkpoint")->required();

  // pretrain
  Common pt;
  std::string pt_target, pt_out, pt_arch;
  auto* pt_cmd = app.add_subcommand("pretrain", "Stage 2: contrastive student backbone on target data");
  add_common(pt_cmd, pt);
  pt_cmd->add_option("--target", pt_target, "Target dataset")->required();
  pt_cmd->add_option("--out", pt_out, "Output backbone checkpoint")->required();
  pt_cmd->add_option("--arch", pt_arch, "Student architecture");

  // distill
  Common ds;
  std::string ds_teacher, ds_init, ds_target, ds_out, ds_trace, ds_arch, ds_eval;
  std::optional<std::size_t> ds_phases, ds_epochs;
  bool ds_soft = false;
  auto* ds_cmd = app.add_subcommand("distill", "Stage 3: phased pseudo-label distillation");
  add_common(ds_cmd, ds);
  ds_cmd->add_option("--teacher", ds_teacher, "Teacher checkpoint")->required();
  ds_cmd->add_option("--student-init", ds_init, "Backbone checkpoint; random init when omitted");
  ds_cmd->add_option("--target", ds_target, "Target dataset")->required();
  ds_cmd->add_option("--out", ds_out, "Output checkpoint")->required();
  ds_cmd->add_option("--trace", ds_trace, "Per-phase trace JSON");
  ds_cmd->add_option("--arch", ds_arch, "Student architecture");
  ds_cmd->add_option("--phases", ds_phases, "Number of phases");
  ds_cmd->add_option("--epochs-per-phase", ds_epochs, "Epochs per hard-label phase");
  ds_cmd->add_flag("--soft-interleave", ds_soft, "Alternate hard and soft-label phases");
  ds_cmd->add_option("--eval", ds_eval, "Labeled dataset for the per-phase accuracy trace");

  // calibrate
  Common cb;
  std::string cb_model, cb_target, cb_out;
  auto* cb_cmd = app.add_subcommand("calibrate", "Fit per-class classifier scales on target data");
  add_common(cb_cmd, cb);
  cb_cmd->add_option("--model", cb_model, "Model checkpoint")->required();
  cb_cmd->add_option("--target", cb_target, "Target dataset")->required();
  cb_cmd->add_option("--out", cb_out, "Output checkpoint")->required();

  // evaluate
  std::string ev_model, ev_data, ev_buckets;
  auto* ev_cmd = app.add_subcommand("evaluate", "Accuracy metrics of a model on a labeled dataset");
  ev_cmd->add_option("--model", ev_model, "Model checkpoint")->required();
  ev_cmd->add_option("--data", ev_data, "Labeled dataset")->required();
  ev_cmd->add_option("--buckets-from", ev_buckets, "Dataset whose many/medium/few buckets to report");

  // run
  Common rn;
  std::string rn_out;
  std::vector<std::uint64_t> rn_seeds;
  auto* rn_cmd = app.add_subcommand("run", "Full pipeline over several seeds");
  add_common(rn_cmd, rn);
  rn_cmd->add_option("--out", rn_out, "Output directory");
  rn_cmd->add_option("--seeds", rn_seeds, "Seeds (overrides the config)");

  // compare
  std::vector<std::string> cmp_reports;
  std::string cmp_csv;
  auto* cmp_cmd = app.add_subcommand("compare", "Stage-ablation table over run reports");
  cmp_cmd->add_option("reports", cmp_reports, "report.json files or run directories")->required();
  cmp_cmd->add_option("--csv", cmp_csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) {
      auto cfg = load_config(gen);
      const auto& b = cfg.benchmark;
      ota::GeneratorSpec spec = b.geometry;
      const ota::Rng master(gen.seed);
      spec.geometry_seed = master.substream("benchmark.geometry").seed();
      const bool target = gen_domain == "target";
      spec.n_per_class = gen_n.value_or(target ? b.n_target_per_class : b.n_source_per_class);
      spec.sample_seed = master.substream(target ? "benchmark.target" : "benchmark.source").seed();
      ota::Dataset data = ota::generate(spec);
      if (target) {
        ota::ShiftSpec shift = b.shift;
        if (!gen_shift_kind.empty()) shift.kind = ota::parse_shift_kind(gen_shift_kind);
        if (gen_magnitude) shift.magnitude = *gen_magnitude;
        shift.seed = master.substream("benchmark.shift").seed();
        data = ota::apply_shift(data, shift);
      } else {
        const double ratio = gen_imbalance.value_or(b.imbalance_ratio);
        if (ratio > 1.0) {
          data = ota::subsample_longtail(data, {ratio, master.substream("benchmark.longtail").seed()});
        }
      }
      ota::save_dataset(gen_out, data);
      print_json({{"out", gen_out}, {"rows", data.features.rows()}, {"class_counts", data.class_counts}});
    } else if (*ts_cmd) {
      auto cfg = load_config(ts);
      const ota::ArchSpec arch = ts_arch.empty() ? cfg.teacher_arch : ota::ArchSpec::parse(ts_arch);
      const ota::Dataset data = ota::load_dataset(ts_data);
      ota::Rng rng = ota::Rng(ts.seed).substream("stage0");
      ota::SourceTrainReport report;
      const ota::Network net = ota::train_source(arch, data, cfg.source, rng, &report);
      ota::save_checkpoint(ts_out, net, rng.state(), {{"stage", "source"}});
      print_json({{"out", ts_out}, {"epoch_loss", report.epoch_loss}, {"fingerprint", net.fingerprint()}});
    } else if (*ad_cmd) {
      auto cfg = load_config(ad);
      const ota::Network source = load_model(ad_source);
      const ota::Dataset target = ota::load_dataset(ad_target);
      ota::Rng rng = ota::Rng(ad.seed).substream("stage1");
      auto [adapted, report] = ota::adapt(source, target.unlabeled(), cfg.adapt, rng);
      ota::save_checkpoint(ad_out, adapted, rng.state(), {{"stage", "adapt"}});
      print_json(report.to_json());
      if (report.aborted) return 2;
    } else if (*pt_cmd) {
      auto cfg = load_config(pt);
      const ota::ArchSpec arch = pt_arch.empty() ? cfg.student_arch : ota::ArchSpec::parse(pt_arch);
      const ota::Dataset target = ota::load_dataset(pt_target);
      ota::Rng rng = ota::Rng(pt.seed).substream("stage2");
      const ota::InitializedStudent init = ota::pretrain(arch, target.unlabeled(), cfg.pretrain, cfg.augment, rng);
      ota::save_checkpoint(pt_out, init.backbone, rng.state(),
                           {{"stage", "pretrain"}, {"provenance", ota::to_string(init.provenance)}});
      print_json({{"out", pt_out}, {"loss_curve", init.loss_curve}});
    } else if (*ds_cmd) {
      auto cfg = load_config(ds);
      if (ds_phases) cfg.distill.schedule.num_phases = *ds_phases;
      if (ds_epochs) cfg.distill.schedule.epochs_per_phase = *ds_epochs;
      if (ds_soft) cfg.distill.schedule.soft_label_interleave = true;
      const ota::ArchSpec arch = ds_arch.empty() ? cfg.student_arch : ota::ArchSpec::parse(ds_arch);
      const ota::Network teacher = load_model(ds_teacher);
      const ota::Dataset target = ota::load_dataset(ds_target);
      ota::Rng rng = ota::Rng(ds.seed).substream("stage3");
      ota::InitializedStudent init;
      if (ds_init.empty()) {
        ota::Rng init_rng = ota::Rng(ds.seed).substream("stage3.fallback_init");
        init = ota::RandomInitializer().initialize(arch, target.unlabeled(), init_rng);
      } else {
        ota::Checkpoint ckpt = ota::load_checkpoint(ds_init);
        if (!ckpt.backbone_only()) throw ota::ConfigError("--student-init must be a backbone checkpoint");
        init.backbone = std::move(ckpt.network);
        init.provenance = ota::parse_init_kind(ckpt.meta.value("provenance", std::string("contrastive")));
      }
      std::optional<ota::Dataset> eval;
      if (!ds_eval.empty()) eval = ota::load_dataset(ds_eval);
      ota::PhaseEvaluator evaluator;
      if (eval) evaluator = [&eval](ota::Network& net) { return ota::evaluate(net, *eval).acc; };
      ota::DistillResult result =
          ota::distill(teacher, init, arch, target.unlabeled(), cfg.distill, cfg.augment, rng, evaluator);
      ota::save_checkpoint(ds_out, result.student, rng.state(), {{"stage", "distill"}});
      if (!ds_trace.empty()) ota::write_text_file(ds_trace, result.trace_json().dump(2) + "\n");
      print_json(result.trace_json());
    } else if (*cb_cmd) {
      auto cfg = load_config(cb);
      const ota::Network model = load_model(cb_model);
      const ota::Dataset target = ota::load_dataset(cb_target);
      ota::Rng rng = ota::Rng(cb.seed).substream("calibrate");
      const ota::CalibrationResult result =
          ota::calibrate_classifier(model, target.unlabeled(), cfg.calibrate, cfg.augment, rng);
      ota::save_checkpoint(cb_out, result.model, rng.state(), {{"stage", "calibrate"}, {"scales", result.scales.s}});
      print_json({{"scales", result.scales.s}, {"round_loss", result.round_loss}});
    } else if (*ev_cmd) {
      const ota::Network model = load_model(ev_model);
      const ota::Dataset data = ota::load_dataset(ev_data);
      std::optional<ota::ClassBuckets> buckets;
      if (!ev_buckets.empty()) {
        const ota::Dataset ref = ota::load_dataset(ev_buckets);
        buckets = ref.buckets ? *ref.buckets : ota::ClassBuckets::from_counts(ref.class_counts);
      }
      print_json(ota::evaluate(model, data, buckets ? &*buckets : nullptr).to_json());
    } else if (*rn_cmd) {
      auto cfg = load_config(rn);
      if (!rn_out.empty()) cfg.output_dir = rn_out;
      if (!rn_seeds.empty()) cfg.seeds = rn_seeds;
      const ota::ExperimentResult result = ota::run_experiment(cfg);
      print_json(result.summary);
      if (result.summary.value("failed_seeds", 0) > 0) {
        for (const auto& s : result.seeds) {
          if (!s.ok) {
            std::cerr << fmt::format("seed {} failed: {}\n", s.seed, s.error);
            return s.error_code;
          }
        }
      }
    } else if (*cmp_cmd) {
      std::vector<std::filesystem::path> paths(cmp_reports.begin(), cmp_reports.end());
      const ota::ComparisonTable table = ota::compare_files(paths);
      std::cout << table.to_text();
      if (!cmp_csv.empty()) ota::write_text_file(cmp_csv, table.to_csv());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ota::exit_code(e);
  }
  return 0;
}

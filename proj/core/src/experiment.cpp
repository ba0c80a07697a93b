#include "ota/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>

#include "ota/checkpoint.hpp"
#include "ota/error.hpp"

namespace ota {

namespace {

GeneratorSpec seeded_spec(const ExperimentConfig& cfg, const Rng& master, std::size_t n,
                          const char* sample_stream) {
  GeneratorSpec spec = cfg.benchmark.geometry;
  spec.n_per_class = n;
  spec.geometry_seed = master.substream("benchmark.geometry").seed();
  spec.sample_seed = master.substream(sample_stream).seed();
  return spec;
}

BenchmarkData build_data(const ExperimentConfig& cfg, const Rng& master) {
  BenchmarkData d;
  const auto& b = cfg.benchmark;
  if (!b.source_path.empty() || !b.target_path.empty()) {
    if (b.source_path.empty() || b.target_path.empty()) {
      throw ConfigError("both source_path and target_path are required when loading data");
    }
    d.source = load_dataset(b.source_path);
    d.target = load_dataset(b.target_path);
    if (!d.target.has_labels()) throw ConfigError("target dataset needs labels for evaluation");
    d.eval = d.target;
    d.in_domain = d.source;
    return d;
  }
  ShiftSpec shift = b.shift;
  shift.seed = master.substream("benchmark.shift").seed();

  const Dataset full_source = generate(seeded_spec(cfg, master, b.n_source_per_class, "benchmark.source"));
  d.source = full_source;
  if (b.imbalance_ratio > 1.0) {
    d.source = subsample_longtail(full_source, {b.imbalance_ratio, master.substream("benchmark.longtail").seed()});
  }
  d.target = apply_shift(generate(seeded_spec(cfg, master, b.n_target_per_class, "benchmark.target")), shift);
  if (b.eval_split == EvalSplit::heldout) {
    d.eval = apply_shift(generate(seeded_spec(cfg, master, b.n_target_per_class, "benchmark.heldout")), shift);
  } else {
    d.eval = d.target;
  }
  d.in_domain = generate(seeded_spec(cfg, master, b.n_target_per_class, "benchmark.in_domain"));
  return d;
}

void save_ckpt(const ExperimentConfig& cfg, std::uint64_t seed, const char* name,
               const Network& net, const nlohmann::json& meta = nlohmann::json::object()) {
  if (cfg.output_dir.empty() || !cfg.save_checkpoints) return;
  const auto dir = std::filesystem::path(cfg.output_dir) / fmt::format("seed_{}", seed);
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / fmt::format("{}.ckpt", name), net, "", meta);
}

nlohmann::json stat_pair(const std::vector<double>& values) {
  return {{"median", median(values)}, {"iqr", interquartile_range(values)}, {"n", values.size()}};
}

std::size_t thread_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("OTA_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) cap = static_cast<std::size_t>(v);
  }
  return cap;
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

BenchmarkData build_benchmark(const ExperimentConfig& cfg, std::uint64_t seed) {
  return build_data(cfg, Rng(seed));
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double interquartile_range(std::vector<double> values) {
  if (values.size() < 2) return 0.0;
  std::sort(values.begin(), values.end());
  auto quantile = [&values](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return quantile(0.75) - quantile(0.25);
}

const StageResult* SeedReport::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const MetricsReport* SeedReport::final_metrics() const {
  return stages.empty() ? nullptr : &stages.back().metrics;
}

nlohmann::json SeedReport::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stages) st.push_back({{"name", s.name}, {"metrics", s.metrics.to_json()}});
  return {{"seed", seed},
          {"status", ok ? "ok" : "error"},
          {"error", error},
          {"error_code", error_code},
          {"stages", st},
          {"in_domain", in_domain ? in_domain->to_json() : nlohmann::json()},
          {"adapt", adapt_report},
          {"source_loss", source_loss},
          {"pretrain_loss", pretrain_loss},
          {"distill_trace", distill_trace},
          {"calibration_scales", calibration_scales},
          {"calibration_loss", calibration_loss},
          {"fingerprints", fingerprints}};
}

namespace {

Network load_source(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::string path = cfg.source_checkpoint;
  const std::string key = "{seed}";
  for (auto pos = path.find(key); pos != std::string::npos; pos = path.find(key, pos)) {
    path.replace(pos, key.size(), std::to_string(seed));
  }
  Network net = load_checkpoint(path).network;
  Rng probe(0);
  if (!net.same_architecture(Network::build(cfg.teacher_arch, probe))) {
    throw ArchitectureMismatch(fmt::format("source checkpoint {} does not match teacher architecture {}",
                                           path, cfg.teacher_arch.to_string()));
  }
  net.set_mode(Mode::eval);
  return net;
}

}  // namespace

SeedReport run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedReport rep;
  rep.seed = seed;
  const Rng master(seed);
  try {
    const BenchmarkData data = build_data(cfg, master);
    const ClassBuckets* buckets = data.source.buckets ? &*data.source.buckets : nullptr;
    const UnlabeledView target = data.target.unlabeled();
    auto record = [&](const char* name, const Network& net) {
      MetricsReport m = evaluate(net, data.eval, buckets);
      m.seed = seed;
      rep.stages.push_back({name, std::move(m)});
    };

    Network source;
    if (cfg.source_checkpoint.empty()) {
      Rng stage0_rng = master.substream("stage0");
      SourceTrainReport source_report;
      source = train_source(cfg.teacher_arch, data.source, cfg.source, stage0_rng, &source_report);
      rep.source_loss = source_report.epoch_loss;
    } else {
      source = load_source(cfg, seed);
    }
    rep.fingerprints["source"] = source.fingerprint();
    save_ckpt(cfg, seed, "source", source);
    record("source", source);
    rep.in_domain = evaluate(source, data.in_domain, nullptr);
    rep.in_domain->seed = seed;

    Network teacher = source;
    if (cfg.stages.stage1) {
      Rng rng = master.substream("stage1");
      auto [adapted, adapt_report] = adapt(source, target, cfg.adapt, rng);
      rep.adapt_report = adapt_report.to_json();
      rep.fingerprints["stage1"] = adapted.fingerprint();
      save_ckpt(cfg, seed, "adapted", adapted);
      record("stage1", adapted);
      teacher = std::move(adapted);
    }

    std::optional<InitializedStudent> init;
    if (cfg.stages.stage2) {
      Rng rng = master.substream("stage2");
      init = pretrain(cfg.student_arch, target, cfg.pretrain, cfg.augment, rng);
      rep.pretrain_loss = init->loss_curve;
      rep.fingerprints["stage2"] = init->backbone.fingerprint();
      save_ckpt(cfg, seed, "backbone", init->backbone);
    }

    Network final_model = teacher;
    if (cfg.stages.stage3) {
      Rng rng = master.substream("stage3");
      if (!init) {
        Rng init_rng = master.substream("stage3.fallback_init");
        switch (cfg.fallback_init) {
          case InitKind::random:
            init = RandomInitializer().initialize(cfg.student_arch, target, init_rng);
            break;
          case InitKind::source_copy:
            init = SourceCopyInitializer(source).initialize(cfg.student_arch, target, init_rng);
            break;
          case InitKind::contrastive:
            throw ConfigError("fallback_init cannot be contrastive; enable stage2 instead");
        }
      }
      const Dataset& eval_set = data.eval;
      PhaseEvaluator evaluator = [&eval_set, buckets](Network& net) {
        return evaluate(net, eval_set, buckets).acc;
      };
      DistillResult dr = distill(teacher, *init, cfg.student_arch, target, cfg.distill, cfg.augment, rng, evaluator);
      rep.distill_trace = dr.trace_json();
      rep.fingerprints["stage3"] = dr.student.fingerprint();
      save_ckpt(cfg, seed, "student", dr.student);
      record("stage3", dr.student);
      final_model = std::move(dr.student);
    }

    if (cfg.stages.calibrate) {
      Rng rng = master.substream("calibrate");
      CalibrationResult cal = calibrate_classifier(final_model, target, cfg.calibrate, cfg.augment, rng);
      rep.calibration_scales = cal.scales.s;
      rep.calibration_loss = cal.round_loss;
      rep.fingerprints["calibrate"] = cal.model.fingerprint();
      save_ckpt(cfg, seed, "calibrated", cal.model);
      record("calibrate", cal.model);
    }
  } catch (const Error& e) {
    rep.ok = false;
    rep.error = e.what();
    rep.error_code = exit_code(e);
  }
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (auto& s : rep.stages) s.metrics.runtime_seconds = rep.runtime_seconds;
  return rep;
}

nlohmann::json ExperimentResult::report_json(const ExperimentConfig& cfg) const {
  nlohmann::json seeds_json = nlohmann::json::array();
  for (const auto& s : seeds) seeds_json.push_back(s.to_json());
  return {{"schema_version", kReportSchemaVersion},
          {"label", label},
          {"config", cfg.to_json()},
          {"seeds", seeds_json},
          {"summary", summary}};
}

namespace {

nlohmann::json summarize(const std::vector<SeedReport>& seeds) {
  std::vector<std::string> stage_names;
  for (const auto& s : seeds) {
    for (const auto& st : s.stages) {
      if (std::find(stage_names.begin(), stage_names.end(), st.name) == stage_names.end()) {
        stage_names.push_back(st.name);
      }
    }
  }
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& name : stage_names) {
    std::vector<double> acc, avg;
    std::map<std::string, std::vector<double>> buckets;
    for (const auto& s : seeds) {
      if (!s.ok) continue;
      if (const StageResult* st = s.stage(name)) {
        acc.push_back(st->metrics.acc);
        avg.push_back(st->metrics.avg);
        for (const auto& [b, v] : st->metrics.buckets) buckets[b].push_back(v);
      }
    }
    nlohmann::json entry = {{"acc", stat_pair(acc)}, {"avg", stat_pair(avg)}};
    for (auto& [b, v] : buckets) entry["buckets"][b] = stat_pair(v);
    stages[name] = entry;
  }

  nlohmann::json phases = nlohmann::json::array();
  std::size_t max_phase = 0;
  for (const auto& s : seeds) max_phase = std::max(max_phase, s.distill_trace.size());
  for (std::size_t p = 0; p < max_phase; ++p) {
    std::vector<double> acc;
    for (const auto& s : seeds) {
      if (s.ok && p < s.distill_trace.size() && s.distill_trace[p]["accuracy"].is_number()) {
        acc.push_back(s.distill_trace[p]["accuracy"].get<double>());
      }
    }
    phases.push_back({{"phase", p + 1}, {"accuracy", stat_pair(acc)}});
  }

  std::vector<double> in_domain;
  for (const auto& s : seeds) {
    if (s.ok && s.in_domain) in_domain.push_back(s.in_domain->acc);
  }

  std::size_t failed = 0;
  for (const auto& s : seeds) failed += s.ok ? 0 : 1;
  nlohmann::json out = {{"stages", stages},
                        {"phases", phases},
                        {"in_domain_acc", stat_pair(in_domain)},
                        {"failed_seeds", failed}};
  out["final_stage"] = stage_names.empty() ? nlohmann::json() : nlohmann::json(stage_names.back());
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.label = cfg.stages.label();
  result.seeds.resize(cfg.seeds.size());

  const std::size_t workers = std::min(thread_cap(), cfg.seeds.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) result.seeds[i] = run_seed(cfg, cfg.seeds[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
          result.seeds[i] = run_seed(cfg, cfg.seeds[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  result.summary = summarize(result.seeds);

  if (!cfg.output_dir.empty()) {
    const std::filesystem::path dir(cfg.output_dir);
    write_text_file(dir / "report.json", result.report_json(cfg).dump(2) + "\n");
    write_text_file(dir / "per_class.csv", per_class_csv(result));
    write_text_file(dir / "trace.csv", trace_csv(result));
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& s : result.seeds) timing.push_back({{"seed", s.seed}, {"runtime_seconds", s.runtime_seconds}});
    write_text_file(dir / "timing.json", timing.dump(2) + "\n");
  }
  return result;
}

std::string per_class_csv(const ExperimentResult& result) {
  std::string out = "seed,stage,class,count,correct,accuracy\n";
  for (const auto& s : result.seeds) {
    for (const auto& st : s.stages) {
      const auto& m = st.metrics;
      for (std::size_t c = 0; c < m.class_counts.size(); ++c) {
        out += fmt::format("{},{},{},{},{},{}\n", s.seed, st.name, c, m.class_counts[c], m.correct[c],
                           num(m.per_class[c]));
      }
    }
  }
  return out;
}

std::string trace_csv(const ExperimentResult& result) {
  std::string out = "seed,stage,step,metric,value\n";
  for (const auto& s : result.seeds) {
    for (std::size_t e = 0; e < s.source_loss.size(); ++e) {
      out += fmt::format("{},source,{},loss,{}\n", s.seed, e + 1, num(s.source_loss[e]));
    }
    if (s.adapt_report.is_object()) {
      const auto& epochs = s.adapt_report["epochs"];
      for (std::size_t e = 0; e < epochs.size(); ++e) {
        for (const char* key : {"infomax", "entropy", "diversity"}) {
          out += fmt::format("{},stage1,{},{},{}\n", s.seed, e + 1, key, num(epochs[e][key].get<double>()));
        }
      }
    }
    for (std::size_t e = 0; e < s.pretrain_loss.size(); ++e) {
      out += fmt::format("{},stage2,{},infonce,{}\n", s.seed, e + 1, num(s.pretrain_loss[e]));
    }
    for (const auto& phase : s.distill_trace) {
      const auto p = phase["phase"].get<std::size_t>();
      const auto& losses = phase["epoch_loss"];
      if (!losses.empty()) {
        out += fmt::format("{},stage3,{},final_loss,{}\n", s.seed, p, num(losses.back().get<double>()));
      }
      if (phase["accuracy"].is_number()) {
        out += fmt::format("{},stage3,{},accuracy,{}\n", s.seed, p, num(phase["accuracy"].get<double>()));
      }
      if (phase["label_agreement"].is_number()) {
        out += fmt::format("{},stage3,{},label_agreement,{}\n", s.seed, p,
                           num(phase["label_agreement"].get<double>()));
      }
    }
    for (std::size_t r = 0; r < s.calibration_loss.size(); ++r) {
      out += fmt::format("{},calibrate,{},loss,{}\n", s.seed, r + 1, num(s.calibration_loss[r]));
    }
  }
  return out;
}

}  // namespace ota

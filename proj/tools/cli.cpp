#include "cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "cardiseg/config.hpp"
#include "cardiseg/gradcheck.hpp"
#include "cardiseg/random.hpp"
#include "cardiseg/report.hpp"
#include "cardiseg/synth.hpp"
#include "cardiseg/volume_io.hpp"
#include "json.hpp"

namespace cardiseg::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string precision;
  bool verbose = false;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.precision.empty()) c.precision = parse_precision(g.precision);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

DatasetIndex synthetic_cohort(const ExperimentConfig& c, Distribution d) {
  const SynthSpec spec = d == Distribution::kA ? SynthSpec::distribution_a() : SynthSpec::distribution_b();
  const std::size_t n = d == Distribution::kA ? c.dataset.synthetic_patients : c.dataset.synthetic_unseen_patients;
  return synth_generate(spec, n, mix_seed({c.seed, c.dataset.synthetic_seed, static_cast<std::uint64_t>(d)}));
}

DatasetIndex cohort_a(const ExperimentConfig& c) {
  return c.dataset.manifest.empty() ? synthetic_cohort(c, Distribution::kA) : load_manifest(c.dataset.manifest);
}

DatasetIndex cohort_b(const ExperimentConfig& c) {
  return c.dataset.unseen_manifest.empty() ? synthetic_cohort(c, Distribution::kB)
                                           : load_manifest(c.dataset.unseen_manifest);
}

std::string summary_line(const std::string& name, const DatasetEvaluation& e) {
  std::string line = name;
  line.resize(std::max<std::size_t>(line.size(), 12), ' ');
  char buf[64];
  for (const auto& label : kReportLabels) {
    auto it = e.mean.find(label);
    if (it == e.mean.end()) continue;
    std::snprintf(buf, sizeof(buf), "  %s %.3f +- %.3f", label.c_str(), it->second, e.sd.at(label));
    line += buf;
  }
  return line + "\n";
}

struct Baseline {
  std::vector<std::string> train_patients, test_patients;
};

Baseline baseline_split(const ExperimentConfig& c, const DatasetIndex& a) {
  FoldAssignment fa;
  switch (c.experiment.split) {
    case SplitStrategy::kAuto: fa = auto_kfold(a, c.experiment.k, c.split_seed()); break;
    case SplitStrategy::kStratified: fa = stratified_kfold(a, c.experiment.k, c.split_seed()); break;
    case SplitStrategy::kRandom: fa = random_kfold(a, c.experiment.k, c.split_seed()); break;
  }
  return {fa.train_patients(c.experiment.baseline_fold), fa.test_patients(c.experiment.baseline_fold)};
}

template <typename T>
int cmd_crossval(const ExperimentConfig& c, const fs::path& out, std::ostream& os) {
  const DatasetIndex a = cohort_a(c);
  const DatasetIndex b = cohort_b(c);
  CrossvalOptions options;
  options.k = c.experiment.k;
  options.split = c.experiment.split;
  options.split_seed = c.split_seed();
  options.threads = c.threads();
  options.output_dir = out / "crossval";
  options.unseen = &b;
  const auto result = run_crossval<T>(a, c.seeded_model(), c.seeded_train(), c.seeded_pipeline(), options);
  std::vector<FoldMetrics> folds, unseen;
  for (const auto& f : result.folds) {
    folds.push_back(fold_metrics(f));
    unseen.push_back(fold_metrics(f));
  }
  const GapReport report = gap_report(a.provenance(), b.provenance(), folds, unseen);
  write_text(out / "gap_report.json", report.to_json());
  write_text(out / "gap_table.csv", gap_table_csv(report));
  write_text(out / "crossval" / "config.json", c.to_json());
  os << "cross-validation on " << a.provenance() << " (" << a.patient_ids().size() << " patients, k = " << c.experiment.k
     << "), unseen " << b.provenance() << "\n";
  char buf[128];
  for (const auto& row : report.rows) {
    os << row.modality << " (" << row.evaluation_dataset << "):";
    for (const auto& label : kReportLabels) {
      std::snprintf(buf, sizeof(buf), "  %s %.3f +- %.3f", label.c_str(), row.mean.at(label), row.sd.at(label));
      os << buf;
    }
    os << "\n";
  }
  os << "gap train-test:";
  for (const auto& label : kReportLabels) {
    std::snprintf(buf, sizeof(buf), "  %s %.3f", label.c_str(), report.gap_train_test.at(label));
    os << buf;
  }
  os << "\ngap train-unseen:";
  for (const auto& label : kReportLabels) {
    std::snprintf(buf, sizeof(buf), "  %s %.3f", label.c_str(), report.gap_train_unseen.at(label));
    os << buf;
  }
  os << "\nresults in " << out.string() << "\n";
  return 0;
}

template <typename T>
struct TrainedBaseline {
  UNetModel<T> model;
  std::optional<TrainState<T>> state;
};

template <typename T>
TrainedBaseline<T> train_baseline(const ExperimentConfig& c, const DatasetIndex& train, const DatasetIndex& test,
                                  const fs::path& dir) {
  UNetModel<T> model(c.seeded_model());
  FitOptions<T> options;
  options.checkpoint_path = dir / "checkpoint.bin";
  fs::create_directories(dir);
  FitResult<T> fitted = fit(model, train, test, c.seeded_train(), c.seeded_pipeline(), options);
  write_text(dir / "history.csv", fitted.history.to_csv());
  return {std::move(model), std::move(fitted.state)};
}

template <typename T>
int cmd_train(const ExperimentConfig& c, const fs::path& out, std::ostream& os) {
  const DatasetIndex a = cohort_a(c);
  const DatasetIndex b = cohort_b(c);
  const Baseline split = baseline_split(c, a);
  const DatasetIndex train = a.subset(split.train_patients), test = a.subset(split.test_patients);
  const fs::path dir = out / "train";
  const auto trained = train_baseline<T>(c, train, test, dir);
  const std::size_t batch = c.train.batch_size;
  const auto e_train = evaluate_on_dataset(trained.model, train, c.seeded_pipeline(), batch);
  const auto e_test = evaluate_on_dataset(trained.model, test, c.seeded_pipeline(), batch);
  const auto e_b = evaluate_on_dataset(trained.model, b, c.seeded_pipeline(), batch);
  json j;
  j["train_patients"] = split.train_patients;
  j["test_patients"] = split.test_patients;
  j["a_train"] = json::parse(evaluation_json(e_train));
  j["a_test"] = json::parse(evaluation_json(e_test));
  j["b"] = json::parse(evaluation_json(e_b));
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "config.json", c.to_json());
  os << summary_line("A-train", e_train) << summary_line("A-test", e_test) << summary_line("B", e_b);
  os << "checkpoint " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

template <typename T>
int cmd_eval(const ExperimentConfig& c, const fs::path& out, const std::string& checkpoint,
             const std::string& manifest, std::ostream& os) {
  const UNetModel<T> model = load_model<T>(checkpoint);
  std::vector<std::pair<std::string, DatasetIndex>> sets;
  if (!manifest.empty()) {
    DatasetIndex idx = load_manifest(manifest);
    sets.emplace_back(idx.provenance(), std::move(idx));
  } else {
    sets.emplace_back("A", cohort_a(c));
    sets.emplace_back("B", cohort_b(c));
  }
  json j = json::object();
  for (const auto& [name, idx] : sets) {
    const auto e = evaluate_on_dataset(model, idx, c.seeded_pipeline(), c.train.batch_size);
    j[name] = json::parse(evaluation_json(e));
    os << summary_line(name, e);
  }
  write_text(out / "eval" / "metrics.json", j.dump(2) + "\n");
  return 0;
}

template <typename T>
int cmd_finetune(const ExperimentConfig& c, const fs::path& out, const std::string& checkpoint, std::ostream& os) {
  const DatasetIndex a = cohort_a(c);
  const DatasetIndex b = cohort_b(c);
  const Baseline split = baseline_split(c, a);
  const DatasetIndex a_train = a.subset(split.train_patients), a_test = a.subset(split.test_patients);
  const FinetuneSpec spec = c.seeded_finetune();
  spec.validate(b.patient_ids().size());

  std::optional<TrainedBaseline<T>> baseline;
  if (!checkpoint.empty()) {
    if (!spec.restart_optimizer) {
      throw ConfigError("continuing the optimiser needs a baseline trained in this run; drop --checkpoint",
                        "/experiment/finetune/restart_optimizer");
    }
    baseline.emplace(TrainedBaseline<T>{load_model<T>(checkpoint), std::nullopt});
  } else {
    baseline.emplace(train_baseline<T>(c, a_train, a_test, out / "finetune" / "baseline"));
  }

  SweepInputs inputs;
  inputs.a_train = &a_train;
  inputs.a_test = &a_test;
  inputs.b = &b;
  inputs.model = c.seeded_model();
  inputs.train = c.seeded_train();
  inputs.pipeline = c.seeded_pipeline();
  const SweepResult sweep = finetune_sweep<T>(spec, baseline->model, baseline->state ? &*baseline->state : nullptr,
                                              inputs, out / "finetune", c.threads());
  write_text(out / "sweep_curves.csv", sweep.curves_csv());

  // The delta summary compares the baseline with the best finetuned model on B.
  const SweepPoint* best = nullptr;
  for (auto m : spec.methods) {
    const SweepPoint& p = sweep.best_point(m);
    if (!best || p.b_eval.mean.at("Labels") > best->b_eval.mean.at("Labels")) best = &p;
  }
  const auto deltas = improvement_summary({&sweep.baseline_a_train, &sweep.baseline_a_test, &sweep.baseline_b},
                                          {&best->a_train, &best->a_test, &best->b_eval});
  write_text(out / "deltas.csv", deltas_csv(deltas));
  json summary;
  summary["b_eval_patients"] = sweep.b_eval_patients;
  summary["best"] = {{"method", static_cast<int>(best->method)}, {"n", best->n}};
  summary["baseline"] = {{"a_train", json::parse(evaluation_json(sweep.baseline_a_train))},
                         {"a_test", json::parse(evaluation_json(sweep.baseline_a_test))},
                         {"b", json::parse(evaluation_json(sweep.baseline_b))}};
  write_text(out / "finetune" / "summary.json", summary.dump(2) + "\n");
  write_text(out / "finetune" / "config.json", c.to_json());

  os << summary_line("baseline B", sweep.baseline_b);
  for (const auto& p : sweep.points) {
    os << summary_line("m" + to_string(p.method) + " n=" + std::to_string(p.n) + " B", p.b_eval);
  }
  os << "best: method " << to_string(best->method) << ", n = " << best->n << "\n";
  return 0;
}

int cmd_report(const fs::path& out, std::ostream& os) {
  const RenderSummary s = render_plots(out);
  for (const auto& p : s.written) os << "wrote " << p.string() << "\n";
  for (const auto& w : s.warnings) os << "warning: " << w << "\n";
  return 0;
}

int cmd_gradcheck(const ExperimentConfig& c, std::ostream& os) {
  constexpr double kStep = 1e-5, kTolerance = 1e-4;
  if (c.precision == Precision::kF32) {
    os << "note: finite differences need 64-bit arithmetic; checking in f64\n";
  }
  bool ok = true;
  char buf[160];
  for (const auto& e : gradcheck_suite<double>(kStep, c.seed)) {
    const bool pass = e.result.max_rel_error < kTolerance;
    ok = ok && pass;
    std::snprintf(buf, sizeof(buf), "%-28s max_rel_error %.3e  %s\n", e.name.c_str(), e.result.max_rel_error,
                  pass ? "ok" : "FAIL");
    os << buf;
  }
  return ok ? 0 : 1;
}

int cmd_synth(const ExperimentConfig& c, const fs::path& out, const std::string& which, std::ostream& os) {
  std::vector<Distribution> dists;
  if (which == "A" || which == "both") dists.push_back(Distribution::kA);
  if (which == "B" || which == "both") dists.push_back(Distribution::kB);
  for (auto d : dists) {
    const DatasetIndex idx = synthetic_cohort(c, d);
    const fs::path dir = out / to_string(d);
    write_dataset(dir, idx);
    os << to_string(d) << ": " << idx.patient_ids().size() << " patients, " << idx.size() << " volumes -> "
       << (dir / "manifest.json").string() << "\n";
  }
  return 0;
}

template <typename F>
int dispatch(Precision p, F&& f) {
  return p == Precision::kF64 ? f(double{}) : f(float{});
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto previous = spdlog::default_logger();
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("cardiseg", sink);
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> logger;
    ~Restore() { spdlog::set_default_logger(logger); }
  } restore{previous};

  CLI::App app{"Cardiac MRI U-Net segmentation toolkit", "cardiseg"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Top-level seed; overrides the config");
  app.add_option("--out", g.out, "Results directory")->capture_default_str();
  app.add_option("--precision", g.precision, "f32 or f64; overrides the config")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("-v,--verbose", g.verbose, "Log every epoch");

  std::string distribution = "both", checkpoint, manifest;
  auto* synth = app.add_subcommand("synth", "Write synthetic cohorts A and B as raw volumes");
  synth->add_option("--distribution", distribution, "A, B or both")->check(CLI::IsMember({"A", "B", "both"}));
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation plus unseen-cohort evaluation");
  auto* train = app.add_subcommand("train", "Train one model on the baseline fold split");
  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--manifest", manifest, "Dataset manifest (default: both configured cohorts)");
  auto* finetune = app.add_subcommand("finetune", "Finetuning sweep over added unseen-cohort patients");
  finetune->add_option("--checkpoint", checkpoint, "Baseline checkpoint (default: train one)");
  auto* report = app.add_subcommand("report", "Render SVG plots from a results directory");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check of every op and the U-Net");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  logger->set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const ExperimentConfig c = load_config(g);
    const fs::path outdir = g.out;
    if (synth->parsed()) return cmd_synth(c, outdir, distribution, out);
    if (crossval->parsed()) return dispatch(c.precision, [&](auto t) { return cmd_crossval<decltype(t)>(c, outdir, out); });
    if (train->parsed()) return dispatch(c.precision, [&](auto t) { return cmd_train<decltype(t)>(c, outdir, out); });
    if (eval->parsed()) {
      return dispatch(c.precision, [&](auto t) { return cmd_eval<decltype(t)>(c, outdir, checkpoint, manifest, out); });
    }
    if (finetune->parsed()) {
      return dispatch(c.precision, [&](auto t) { return cmd_finetune<decltype(t)>(c, outdir, checkpoint, out); });
    }
    if (report->parsed()) return cmd_report(outdir, out);
    if (gradcheck->parsed()) return cmd_gradcheck(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cardiseg::cli

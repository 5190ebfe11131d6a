#include "cardiseg/experiments.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <thread>

#include "cardiseg/random.hpp"
#include "json_util.hpp"

namespace cardiseg {

using detail::json;

namespace {

double label_value(const VolumeScore& s, const std::string& label) {
  if (label == "Labels") return s.dsc_labels;
  if (label == "RV") return s.dices.at(kRV);
  if (label == "LV") return s.dices.at(kLV);
  return s.dices.at(kMYO);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return v.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Runs fn(0..count-1) on up to `threads` workers. The exception of the
// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(threads, 1), count);
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json scores_json(const DatasetEvaluation& e) {
  json j;
  json mean = json::object(), sd = json::object();
  for (const auto& [k, v] : e.mean) mean[k] = v;
  for (const auto& [k, v] : e.sd) sd[k] = v;
  j["mean"] = mean;
  j["sd"] = sd;
  json vols = json::array();
  for (const auto& s : e.volumes) {
    json v;
    v["patient_id"] = s.patient_id;
    v["phase"] = to_string(s.phase);
    v["dsc_labels"] = s.dsc_labels;
    json d = json::object();
    for (std::size_t c = 1; c < s.dices.size(); ++c) d[label_name(c)] = s.dices[c];
    v["dice"] = d;
    vols.push_back(v);
  }
  j["volumes"] = vols;
  return j;
}

json history_summary(const History& h) {
  return {{"epochs", h.epochs.size()},
          {"best_epoch", h.best_epoch},
          {"stopped_early", h.stopped_early},
          {"reached_target", h.reached_target}};
}

}  // namespace

DatasetEvaluation summarize_scores(std::vector<VolumeScore> volumes) {
  DatasetEvaluation e;
  e.volumes = std::move(volumes);
  const bool per_class = std::all_of(e.volumes.begin(), e.volumes.end(),
                                     [](const VolumeScore& s) { return s.dices.size() == kNumLabels; });
  for (const auto& label : kReportLabels) {
    if (label != "Labels" && !per_class) continue;
    std::vector<double> values;
    for (const auto& s : e.volumes) values.push_back(label_value(s, label));
    e.mean[label] = mean_of(values);
    e.sd[label] = sd_of(values);
  }
  return e;
}

std::string evaluation_json(const DatasetEvaluation& evaluation) { return scores_json(evaluation).dump(2) + "\n"; }

template <typename T>
DatasetEvaluation evaluate_on_dataset(const UNetModel<T>& model, const DatasetIndex& index,
                                      const PipelineConfig& pipeline, std::size_t batch_size) {
  PipelineConfig p = pipeline;
  p.target_height = model.config().input_height;
  p.target_width = model.config().input_width;
  const auto volumes = prepare_volumes<T>(index, p, model.config().num_classes);
  return summarize_scores(evaluate_volumes(model, volumes, batch_size).volumes);
}

std::string to_string(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::kAuto: return "auto";
    case SplitStrategy::kStratified: return "stratified";
    case SplitStrategy::kRandom: return "random";
  }
  return "auto";
}

SplitStrategy parse_split_strategy(const std::string& text) {
  if (text == "auto") return SplitStrategy::kAuto;
  if (text == "stratified") return SplitStrategy::kStratified;
  if (text == "random") return SplitStrategy::kRandom;
  throw ConfigError("unknown split strategy '" + text + "'", "/experiment/split");
}

template <typename T>
CrossvalResult<T> run_crossval(const DatasetIndex& index, const ModelConfig& model, const TrainConfig& train,
                               const PipelineConfig& pipeline, const CrossvalOptions& options) {
  model.validate();
  train.validate(model.num_classes);
  CrossvalResult<T> result;
  switch (options.split) {
    case SplitStrategy::kAuto: result.assignment = auto_kfold(index, options.k, options.split_seed); break;
    case SplitStrategy::kStratified: result.assignment = stratified_kfold(index, options.k, options.split_seed); break;
    case SplitStrategy::kRandom: result.assignment = random_kfold(index, options.k, options.split_seed); break;
  }
  const std::size_t k = options.k;
  std::vector<std::optional<UNetModel<T>>> models(k);
  std::vector<std::optional<TrainState<T>>> states(k);
  result.folds.resize(k);

  parallel_for(k, options.threads, [&](std::size_t f) {
    FoldResult& fr = result.folds[f];
    fr.fold = f;
    fr.train_patients = result.assignment.train_patients(f);
    fr.test_patients = result.assignment.test_patients(f);
    const DatasetIndex train_set = index.subset(fr.train_patients);
    const DatasetIndex test_set = index.subset(fr.test_patients);

    ModelConfig mc = model;
    mc.seed = mix_seed({model.seed, f});
    TrainConfig tc = train;
    tc.seed = mix_seed({train.seed, f});
    UNetModel<T> net(mc);
    FitOptions<T> fit_options;
    const std::filesystem::path dir =
        options.output_dir.empty() ? std::filesystem::path{} : options.output_dir / ("fold" + std::to_string(f));
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      fit_options.checkpoint_path = dir / "checkpoint.bin";
    }
    spdlog::info("fold {}: {} train / {} test patients", f, fr.train_patients.size(), fr.test_patients.size());
    FitResult<T> fitted = fit(net, train_set, test_set, tc, pipeline, fit_options);
    fr.history = std::move(fitted.history);
    fr.train = evaluate_on_dataset(net, train_set, pipeline, tc.batch_size);
    fr.test = evaluate_on_dataset(net, test_set, pipeline, tc.batch_size);
    if (options.unseen) fr.unseen = evaluate_on_dataset(net, *options.unseen, pipeline, tc.batch_size);
    if (!dir.empty()) {
      write_text(dir / "history.csv", fr.history.to_csv());
      write_text(dir / "metrics.json", fold_metrics_json(fr));
    }
    spdlog::info("fold {}: train {:.4f} test {:.4f}", f, fr.train.mean.at("Labels"), fr.test.mean.at("Labels"));
    models[f].emplace(std::move(net));
    states[f].emplace(std::move(fitted.state));
  });

  for (std::size_t f = 0; f < k; ++f) {
    result.models.push_back(std::move(*models[f]));
    result.states.push_back(std::move(*states[f]));
  }
  if (!options.output_dir.empty()) {
    write_text(options.output_dir / "metrics.json", crossval_metrics_json(index.provenance(), result.folds));
  }
  return result;
}

std::string fold_metrics_json(const FoldResult& fold) {
  json j;
  j["fold"] = fold.fold;
  j["train_patients"] = fold.train_patients;
  j["test_patients"] = fold.test_patients;
  j["history"] = history_summary(fold.history);
  j["train"] = scores_json(fold.train);
  j["test"] = scores_json(fold.test);
  if (fold.unseen) j["unseen"] = scores_json(*fold.unseen);
  return j.dump(2) + "\n";
}

std::string crossval_metrics_json(const std::string& dataset, const std::vector<FoldResult>& folds) {
  json j;
  j["dataset"] = dataset;
  j["k"] = folds.size();
  json arr = json::array();
  for (const auto& f : folds) arr.push_back(json::parse(fold_metrics_json(f)));
  j["folds"] = arr;
  return j.dump(2) + "\n";
}

FoldMetrics fold_metrics(const FoldResult& fold) {
  FoldMetrics m;
  m.fold = fold.fold;
  m.train = fold.train.mean;
  m.test = fold.test.mean;
  if (fold.unseen) m.unseen = fold.unseen->mean;
  return m;
}

namespace {

GapRow make_row(const std::string& training, const std::string& evaluation, const std::string& modality,
                const std::vector<const std::map<std::string, double>*>& per_fold) {
  GapRow row{training, evaluation, modality, {}, {}, {}};
  for (const auto& label : kReportLabels) {
    std::vector<double> values;
    for (std::size_t f = 0; f < per_fold.size(); ++f) {
      auto it = per_fold[f]->find(label);
      if (it == per_fold[f]->end()) {
        throw ValidationError("fold " + std::to_string(f) + " has no " + modality + " value for " + label);
      }
      values.push_back(it->second);
    }
    row.mean[label] = mean_of(values);
    row.sd[label] = sd_of(values);
    row.fold_values[label] = std::move(values);
  }
  return row;
}

}  // namespace

GapReport gap_report(const std::string& training_dataset, const std::string& unseen_dataset,
                     const std::vector<FoldMetrics>& crossval, const std::vector<FoldMetrics>& unseen) {
  if (crossval.empty()) throw ValidationError("gap report needs at least one fold");
  if (!unseen.empty()) {
    if (unseen.size() != crossval.size()) {
      throw ValidationError("unseen results cover " + std::to_string(unseen.size()) + " folds, cross-validation " +
                            std::to_string(crossval.size()));
    }
    for (std::size_t i = 0; i < crossval.size(); ++i) {
      if (unseen[i].fold != crossval[i].fold) {
        throw ValidationError("fold mismatch at position " + std::to_string(i));
      }
    }
  }
  GapReport r;
  r.training_dataset = training_dataset;
  r.unseen_dataset = unseen.empty() ? std::string{} : unseen_dataset;
  r.folds = crossval.size();
  std::vector<const std::map<std::string, double>*> train, test, other;
  for (const auto& f : crossval) {
    train.push_back(&f.train);
    test.push_back(&f.test);
  }
  for (const auto& f : unseen) other.push_back(&f.unseen);
  r.rows.push_back(make_row(training_dataset, training_dataset, "train", train));
  r.rows.push_back(make_row(training_dataset, training_dataset, "test", test));
  if (!unseen.empty()) r.rows.push_back(make_row(training_dataset, unseen_dataset, "all", other));
  for (const auto& label : kReportLabels) {
    r.gap_train_test[label] = r.rows[0].mean[label] - r.rows[1].mean[label];
    if (!unseen.empty()) r.gap_train_unseen[label] = r.rows[0].mean[label] - r.rows[2].mean[label];
  }
  return r;
}

std::string GapReport::to_json() const {
  json j;
  j["format"] = "cardiseg-gap-report";
  j["version"] = 1;
  j["training_dataset"] = training_dataset;
  j["unseen_dataset"] = unseen_dataset;
  j["folds"] = folds;
  json rs = json::array();
  for (const auto& row : rows) {
    json r;
    r["training_dataset"] = row.training_dataset;
    r["evaluation_dataset"] = row.evaluation_dataset;
    r["modality"] = row.modality;
    json labels = json::object();
    for (const auto& [label, m] : row.mean) {
      labels[label] = {{"mean", m}, {"sd", row.sd.at(label)}, {"folds", row.fold_values.at(label)}};
    }
    r["labels"] = labels;
    rs.push_back(r);
  }
  j["rows"] = rs;
  j["gaps"] = {{"train_test", gap_train_test}, {"train_unseen", gap_train_unseen}};
  return j.dump(2) + "\n";
}

GapReport GapReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("gap report: ") + e.what());
  }
  try {
    if (j.at("format") != "cardiseg-gap-report") throw ParseError("not a gap report");
    GapReport r;
    r.training_dataset = j.at("training_dataset").get<std::string>();
    r.unseen_dataset = j.at("unseen_dataset").get<std::string>();
    r.folds = j.at("folds").get<std::size_t>();
    for (const auto& rj : j.at("rows")) {
      GapRow row;
      row.training_dataset = rj.at("training_dataset").get<std::string>();
      row.evaluation_dataset = rj.at("evaluation_dataset").get<std::string>();
      row.modality = rj.at("modality").get<std::string>();
      for (const auto& [label, v] : rj.at("labels").items()) {
        row.mean[label] = v.at("mean").get<double>();
        row.sd[label] = v.at("sd").get<double>();
        row.fold_values[label] = v.at("folds").get<std::vector<double>>();
      }
      r.rows.push_back(std::move(row));
    }
    r.gap_train_test = j.at("gaps").at("train_test").get<std::map<std::string, double>>();
    r.gap_train_unseen = j.at("gaps").at("train_unseen").get<std::map<std::string, double>>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("gap report: ") + e.what());
  }
}

std::string to_string(FinetuneMethod m) { return std::to_string(static_cast<int>(m)); }

void FinetuneSpec::validate(std::size_t b_patients) const {
  if (methods.empty()) throw ConfigError("needs at least one method", "/experiment/finetune/methods");
  for (auto m : methods) {
    const int v = static_cast<int>(m);
    if (v < 1 || v > 3) throw ConfigError("methods are 1, 2 or 3", "/experiment/finetune/methods");
  }
  if (n_schedule.empty()) throw ConfigError("must not be empty", "/experiment/finetune/n_schedule");
  for (std::size_t i = 1; i < n_schedule.size(); ++i) {
    if (n_schedule[i] <= n_schedule[i - 1]) {
      throw ConfigError("must be strictly increasing", "/experiment/finetune/n_schedule");
    }
  }
  if (n_schedule.back() >= b_patients) {
    throw ConfigError("n = " + std::to_string(n_schedule.back()) + " leaves no evaluation patients out of " +
                          std::to_string(b_patients),
                      "/experiment/finetune/n_schedule");
  }
}

std::vector<std::string> finetune_patient_order(const DatasetIndex& b, std::uint64_t seed) {
  std::vector<std::string> ids = b.patient_ids();
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed({seed, 0x66696e65ULL}));
  rng.shuffle(std::span<std::string>(ids));
  return ids;
}

std::string SweepResult::curves_csv() const {
  std::string out = "method,n,evaluation_set,label,dice\n";
  char line[160];
  for (const auto& p : points) {
    const std::pair<const char*, const DatasetEvaluation*> sets[] = {
        {"A-train", &p.a_train}, {"A-test", &p.a_test}, {"B", &p.b_eval}};
    for (const auto& [name, eval] : sets) {
      for (const auto& label : kReportLabels) {
        auto it = eval->mean.find(label);
        if (it == eval->mean.end()) continue;
        std::snprintf(line, sizeof(line), "%s,%zu,%s,%s,%.6f\n", to_string(p.method).c_str(), p.n, name,
                      label.c_str(), it->second);
        out += line;
      }
    }
  }
  return out;
}

const SweepPoint& SweepResult::point(FinetuneMethod method, std::size_t n) const {
  for (const auto& p : points) {
    if (p.method == method && p.n == n) return p;
  }
  throw std::out_of_range("no sweep point for method " + to_string(method) + ", n = " + std::to_string(n));
}

const SweepPoint& SweepResult::best_point(FinetuneMethod method) const {
  const SweepPoint* best = nullptr;
  for (const auto& p : points) {
    if (p.method != method) continue;
    if (!best || p.b_eval.mean.at("Labels") > best->b_eval.mean.at("Labels")) best = &p;
  }
  if (!best) throw std::out_of_range("no sweep points for method " + to_string(method));
  return *best;
}

template <typename T>
SweepResult finetune_sweep(const FinetuneSpec& spec, const UNetModel<T>& baseline,
                           const TrainState<T>* baseline_state, const SweepInputs& in,
                           const std::filesystem::path& output_dir, std::size_t threads) {
  if (!in.a_train || !in.a_test || !in.b) throw ConfigError("sweep needs A-train, A-test and B datasets");
  spec.validate(in.b->patient_ids().size());
  in.train.validate(baseline.config().num_classes);
  const std::size_t batch = in.train.batch_size;

  const std::vector<std::string> order = finetune_patient_order(*in.b, spec.seed);
  SweepResult result;
  result.b_eval_patients.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.n_schedule.back()), order.end());
  std::sort(result.b_eval_patients.begin(), result.b_eval_patients.end());
  const DatasetIndex b_eval = in.b->subset(result.b_eval_patients);

  result.baseline_a_train = evaluate_on_dataset(baseline, *in.a_train, in.pipeline, batch);
  result.baseline_a_test = evaluate_on_dataset(baseline, *in.a_test, in.pipeline, batch);
  result.baseline_b = evaluate_on_dataset(baseline, b_eval, in.pipeline, batch);

  for (auto m : spec.methods) {
    for (std::size_t n : spec.n_schedule) {
      SweepPoint p;
      p.method = m;
      p.n = n;
      p.added_patients.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
      result.points.push_back(std::move(p));
    }
  }

  TrainConfig finetune = in.train;
  if (spec.finetune_epochs > 0) finetune.max_epochs = spec.finetune_epochs;
  // Without a restart the moments and rate carry over, but the plateau and
  // early-stopping bookkeeping restarts because the monitored loss changes.
  std::optional<TrainState<T>> carried;
  if (!spec.restart_optimizer && baseline_state) {
    carried = *baseline_state;
    carried->best_loss = std::numeric_limits<double>::infinity();
    carried->epochs_since_improvement = 0;
    carried->lr_wait = 0;
  }

  parallel_for(result.points.size(), threads, [&](std::size_t i) {
    SweepPoint& p = result.points[i];
    const DatasetIndex added = in.b->subset(p.added_patients);
    std::filesystem::path dir;
    FitOptions<T> options;
    if (!output_dir.empty()) {
      dir = output_dir / ("method" + to_string(p.method)) / ("n" + std::to_string(p.n));
      std::filesystem::create_directories(dir);
      options.checkpoint_path = dir / "checkpoint.bin";
    }
    std::optional<UNetModel<T>> net;
    if (p.method == FinetuneMethod::kRetrain) {
      ModelConfig mc = in.model;
      mc.seed = mix_seed({in.model.seed, p.n});
      TrainConfig tc = in.train;
      tc.seed = mix_seed({in.train.seed, p.n});
      net.emplace(mc);
      p.history = fit(*net, in.a_train->merged(added), DatasetIndex{}, tc, in.pipeline, options).history;
    } else {
      net.emplace(baseline);
      if (p.n > 0) {
        if (carried) options.resume = &*carried;
        TrainConfig tc = finetune;
        tc.seed = mix_seed({in.train.seed, static_cast<std::uint64_t>(p.method), p.n});
        const DatasetIndex data =
            p.method == FinetuneMethod::kContinueCombined ? in.a_train->merged(added) : added;
        p.history = fit(*net, data, DatasetIndex{}, tc, in.pipeline, options).history;
      } else if (!dir.empty()) {
        save_model(options.checkpoint_path, *net);
      }
    }
    p.a_train = evaluate_on_dataset(*net, *in.a_train, in.pipeline, batch);
    p.a_test = evaluate_on_dataset(*net, *in.a_test, in.pipeline, batch);
    p.b_eval = evaluate_on_dataset(*net, b_eval, in.pipeline, batch);
    if (!dir.empty()) {
      write_text(dir / "history.csv", p.history.to_csv());
      json j;
      j["method"] = static_cast<int>(p.method);
      j["n"] = p.n;
      j["added_patients"] = p.added_patients;
      j["history"] = history_summary(p.history);
      j["a_train"] = scores_json(p.a_train);
      j["a_test"] = scores_json(p.a_test);
      j["b_eval"] = scores_json(p.b_eval);
      write_text(dir / "metrics.json", j.dump(2) + "\n");
    }
    spdlog::info("method {} n {}: A-test {:.4f} B {:.4f}", to_string(p.method), p.n, p.a_test.mean.at("Labels"),
                 p.b_eval.mean.at("Labels"));
  });
  return result;
}

std::vector<DeltaRow> improvement_summary(const std::array<const DatasetEvaluation*, 3>& baseline,
                                          const std::array<const DatasetEvaluation*, 3>& finetuned) {
  static const char* kModalities[] = {"A-train", "A-test", "B-unseen"};
  std::vector<DeltaRow> rows;
  for (const auto& label : kReportLabels) {
    for (std::size_t m = 0; m < 3; ++m) {
      auto b = baseline[m]->mean.find(label);
      auto f = finetuned[m]->mean.find(label);
      if (b == baseline[m]->mean.end() || f == finetuned[m]->mean.end()) continue;
      rows.push_back({label, kModalities[m], b->second, f->second, f->second - b->second});
    }
  }
  return rows;
}

std::string deltas_csv(const std::vector<DeltaRow>& rows) {
  std::string out = "label,modality,baseline,finetuned,delta\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f\n", r.label.c_str(), r.modality.c_str(), r.baseline,
                  r.finetuned, r.delta);
    out += line;
  }
  return out;
}

std::size_t worker_threads_from_env() {
  const char* v = std::getenv("CARDISEG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

#define CARDISEG_INSTANTIATE(T)                                                                                  \
  template DatasetEvaluation evaluate_on_dataset<T>(const UNetModel<T>&, const DatasetIndex&,                    \
                                                    const PipelineConfig&, std::size_t);                         \
  template CrossvalResult<T> run_crossval<T>(const DatasetIndex&, const ModelConfig&, const TrainConfig&,       \
                                             const PipelineConfig&, const CrossvalOptions&);                     \
  template SweepResult finetune_sweep<T>(const FinetuneSpec&, const UNetModel<T>&, const TrainState<T>*,        \
                                         const SweepInputs&, const std::filesystem::path&, std::size_t);

CARDISEG_INSTANTIATE(float)
CARDISEG_INSTANTIATE(double)
#undef CARDISEG_INSTANTIATE

}  // namespace cardiseg

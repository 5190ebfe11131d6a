#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "cardiseg/error.hpp"
#include "cardiseg/experiments.hpp"
#include "cardiseg/splits.hpp"
#include "cardiseg/synth.hpp"
#include "test_support.hpp"

using namespace cardiseg;

namespace {

std::map<std::string, double> labels(double all, double rv, double lv, double myo) {
  return {{"Labels", all}, {"RV", rv}, {"LV", lv}, {"MYO", myo}};
}

double sample_sd(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1));
}

// Four folds with train mean 0.917 and unseen mean 0.781 (RV 0.916 / 0.751).
std::pair<std::vector<FoldMetrics>, std::vector<FoldMetrics>> mocked_folds() {
  const double off[4] = {-0.006, 0.002, 0.001, 0.003};
  std::vector<FoldMetrics> cv, unseen;
  for (std::size_t f = 0; f < 4; ++f) {
    FoldMetrics m;
    m.fold = f;
    m.train = labels(0.917 + off[f], 0.916 + off[f], 0.95 + off[f], 0.885 + off[f]);
    m.test = labels(0.900 + off[f], 0.880 + off[f], 0.94 + off[f], 0.88 + off[f]);
    cv.push_back(m);
    FoldMetrics u;
    u.fold = f;
    u.unseen = labels(0.781 - off[f], 0.751 - off[f], 0.85 - off[f], 0.74 - off[f]);
    unseen.push_back(u);
  }
  return {cv, unseen};
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.input_height = m.input_width = 32;
  m.base_channels = 4;
  m.seed = 3;
  return m;
}

TrainConfig quick_train(std::size_t epochs = 1) {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = epochs;
  t.seed = 5;
  return t;
}

}  // namespace

TEST(GapReport, GapArithmetic) {
  const auto [cv, unseen] = mocked_folds();
  const auto r = gap_report("A", "B", cv, unseen);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_NEAR(r.rows[0].mean.at("Labels"), 0.917, 1e-12);
  EXPECT_NEAR(r.rows[2].mean.at("Labels"), 0.781, 1e-12);
  EXPECT_NEAR(r.gap_train_unseen.at("Labels"), 0.136, 1e-12);
  EXPECT_NEAR(r.gap_train_unseen.at("RV"), 0.165, 1e-12);
  for (const auto& label : kReportLabels) {
    EXPECT_EQ(r.gap_train_unseen.at(label), r.rows[0].mean.at(label) - r.rows[2].mean.at(label));
    EXPECT_EQ(r.gap_train_test.at(label), r.rows[0].mean.at(label) - r.rows[1].mean.at(label));
  }
  std::string largest;
  double best = -1;
  for (const auto& [label, gap] : r.gap_train_unseen)
    if (label != "Labels" && gap > best) best = gap, largest = label;
  EXPECT_EQ(largest, "RV");
}

TEST(GapReport, SdOverFoldValues) {
  const auto [cv, unseen] = mocked_folds();
  const auto r = gap_report("A", "B", cv, unseen);
  for (const auto& row : r.rows) {
    for (const auto& label : kReportLabels) {
      const auto& v = row.fold_values.at(label);
      ASSERT_EQ(v.size(), 4u);
      EXPECT_NEAR(row.sd.at(label), sample_sd(v), 1e-15);
    }
  }
  EXPECT_EQ(r.rows[0].modality, "train");
  EXPECT_EQ(r.rows[1].modality, "test");
  EXPECT_EQ(r.rows[2].modality, "all");
  EXPECT_EQ(r.rows[2].evaluation_dataset, "B");
}

TEST(GapReport, IdenticalMetricsGiveZeroGaps) {
  auto [cv, unseen] = mocked_folds();
  for (std::size_t f = 0; f < 4; ++f) {
    cv[f].test = cv[f].train;
    unseen[f].unseen = cv[f].train;
  }
  const auto r = gap_report("A", "B", cv, unseen);
  for (const auto& label : kReportLabels) {
    EXPECT_EQ(r.gap_train_test.at(label), 0.0);
    EXPECT_EQ(r.gap_train_unseen.at(label), 0.0);
  }
}

TEST(GapReport, FoldMismatchRejected) {
  auto [cv, unseen] = mocked_folds();
  auto fewer = unseen;
  fewer.pop_back();
  EXPECT_THROW(gap_report("A", "B", cv, fewer), ValidationError);
  auto shuffled = unseen;
  std::swap(shuffled[0], shuffled[1]);
  EXPECT_THROW(gap_report("A", "B", cv, shuffled), ValidationError);
  EXPECT_THROW(gap_report("A", "B", {}, {}), ValidationError);
  auto missing = cv;
  missing[2].test.erase("MYO");
  EXPECT_THROW(gap_report("A", "B", missing, unseen), ValidationError);
}

TEST(GapReport, WithoutUnseenCohort) {
  const auto [cv, unseen] = mocked_folds();
  const auto r = gap_report("A", "B", cv, {});
  EXPECT_EQ(r.rows.size(), 2u);
  EXPECT_TRUE(r.gap_train_unseen.empty());
}

TEST(GapReport, JsonRoundTrip) {
  const auto [cv, unseen] = mocked_folds();
  const auto r = gap_report("A", "B", cv, unseen);
  const auto text = r.to_json();
  const auto back = GapReport::from_json(text);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_EQ(back.gap_train_unseen.at("Labels"), r.gap_train_unseen.at("Labels"));
  EXPECT_ANY_THROW(GapReport::from_json("{\"format\": \"other\"}"));
}

TEST(Summaries, MeanAndSampleSd) {
  std::vector<VolumeScore> v;
  const double dsc[3][4] = {{0, 0.9, 0.8, 0.7}, {0, 0.6, 0.5, 0.4}, {0, 0.3, 0.9, 0.6}};
  for (auto& row : dsc) {
    VolumeScore s;
    s.patient_id = "p";
    s.dices.assign(row, row + 4);
    s.dsc_labels = (row[1] + row[2] + row[3]) / 3;
    v.push_back(s);
  }
  const auto e = summarize_scores(v);
  EXPECT_NEAR(e.mean.at("RV"), 0.6, 1e-15);
  EXPECT_NEAR(e.sd.at("RV"), sample_sd({0.9, 0.6, 0.3}), 1e-15);
  EXPECT_NEAR(e.mean.at("MYO"), (0.8 + 0.5 + 0.9) / 3, 1e-15);
  EXPECT_NEAR(e.mean.at("LV"), (0.7 + 0.4 + 0.6) / 3, 1e-15);
  EXPECT_EQ(summarize_scores({v[0]}).sd.at("Labels"), 0.0);
  EXPECT_NE(evaluation_json(e).find("\"mean\""), std::string::npos);
}

TEST(FinetuneSpec, DefaultsAndValidation) {
  FinetuneSpec s;
  ASSERT_EQ(s.n_schedule.size(), 10u);
  EXPECT_EQ(s.n_schedule.front(), 5u);
  EXPECT_EQ(s.n_schedule.back(), 150u);
  EXPECT_TRUE(s.restart_optimizer);
  EXPECT_EQ(s.methods.size(), 3u);
  EXPECT_NO_THROW(s.validate(203));
  EXPECT_THROW(s.validate(150), ConfigError);
  s.n_schedule = {3, 3};
  EXPECT_THROW(s.validate(20), ConfigError);
  s.n_schedule = {0, 2};
  EXPECT_NO_THROW(s.validate(20));
  s.methods = {static_cast<FinetuneMethod>(4)};
  EXPECT_THROW(s.validate(20), ConfigError);
}

TEST(FinetuneSpec, PatientOrderIsSeededPermutation) {
  const auto b = synth_generate(SynthSpec::distribution_b(), 10, 1);
  const auto order = finetune_patient_order(b, 7);
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  auto ids = b.patient_ids();
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(sorted, ids);
  EXPECT_EQ(order, finetune_patient_order(b, 7));
  EXPECT_NE(order, finetune_patient_order(b, 8));
}

TEST(Improvement, IdenticalEvaluationsGiveZeroDeltas) {
  DatasetEvaluation e;
  e.mean = labels(0.8, 0.7, 0.9, 0.75);
  const auto rows = improvement_summary({&e, &e, &e}, {&e, &e, &e});
  ASSERT_EQ(rows.size(), 12u);
  for (const auto& r : rows) EXPECT_EQ(r.delta, 0.0);
  const auto csv = deltas_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label,modality,baseline,finetuned,delta");
}

TEST(Improvement, DeltaIsDifference) {
  DatasetEvaluation base, tuned;
  base.mean = labels(0.70, 0.60, 0.80, 0.70);
  tuned.mean = labels(0.80, 0.71, 0.86, 0.81);
  const auto rows = improvement_summary({&base, &base, &base}, {&base, &base, &tuned});
  std::set<std::string> modalities;
  for (const auto& r : rows) {
    modalities.insert(r.modality);
    EXPECT_EQ(r.delta, r.finetuned - r.baseline);
    if (r.modality == "B-unseen" && r.label == "RV") {
      EXPECT_NEAR(r.delta, 0.11, 1e-12);
    }
  }
  EXPECT_EQ(modalities, (std::set<std::string>{"A-train", "A-test", "B-unseen"}));
}

TEST(SplitStrategy, Parse) {
  for (auto s : {SplitStrategy::kAuto, SplitStrategy::kStratified, SplitStrategy::kRandom})
    EXPECT_EQ(parse_split_strategy(to_string(s)), s);
  EXPECT_THROW(parse_split_strategy("loo"), ConfigError);
}

TEST(Crossval, FourFoldsAndByteIdenticalRerun) {
  const auto a = synth_generate(SynthSpec::distribution_a(), 8, 4);
  const auto b = synth_generate(SynthSpec::distribution_b(), 3, 4);
  test::TempDir d1("cv1"), d2("cv2");
  CrossvalOptions opts;
  opts.k = 4;
  opts.split_seed = 2;
  opts.unseen = &b;
  opts.output_dir = d1.path();
  const auto r1 = run_crossval<float>(a, tiny_model(), quick_train(), PipelineConfig{}, opts);
  ASSERT_EQ(r1.models.size(), 4u);
  ASSERT_EQ(r1.folds.size(), 4u);
  for (std::size_t f = 0; f < 4; ++f) {
    const auto& fold = r1.folds[f];
    EXPECT_EQ(fold.fold, f);
    EXPECT_EQ(fold.test_patients, r1.assignment.test_patients(f));
    EXPECT_EQ(fold.train_patients.size() + fold.test_patients.size(), 8u);
    ASSERT_TRUE(fold.unseen.has_value());
    EXPECT_EQ(fold.unseen->volumes.size(), b.size());
    for (const char* name : {"checkpoint.bin", "history.csv", "metrics.json"})
      EXPECT_TRUE(std::filesystem::exists(d1.path() / ("fold" + std::to_string(f)) / name)) << name;
  }
  ASSERT_TRUE(std::filesystem::exists(d1.path() / "metrics.json"));

  opts.output_dir = d2.path();
  opts.threads = 2;
  const auto r2 = run_crossval<float>(a, tiny_model(), quick_train(), PipelineConfig{}, opts);
  EXPECT_EQ(test::read_file(d1.path() / "metrics.json"), test::read_file(d2.path() / "metrics.json"));
  EXPECT_EQ(crossval_metrics_json("A", r1.folds), crossval_metrics_json("A", r2.folds));

  std::vector<FoldMetrics> cv, unseen;
  for (const auto& f : r1.folds) {
    cv.push_back(fold_metrics(f));
    unseen.push_back(fold_metrics(f));
  }
  const auto report = gap_report("A", "B", cv, unseen);
  EXPECT_EQ(report.folds, 4u);
  for (const auto& row : report.rows) EXPECT_EQ(row.fold_values.at("Labels").size(), 4u);
}

TEST(Crossval, EvaluationIsRepeatable) {
  const auto a = synth_generate(SynthSpec::distribution_a(), 3, 9);
  const UNetModel<float> model(tiny_model());
  const auto e1 = evaluate_on_dataset(model, a, PipelineConfig{}, 4);
  const auto e2 = evaluate_on_dataset(model, a, PipelineConfig{}, 4);
  EXPECT_EQ(evaluation_json(e1), evaluation_json(e2));
  EXPECT_EQ(e1.volumes.size(), a.size());
}

TEST(Sweep, CurveShapeNestingAndNoOpPoint) {
  const auto a = synth_generate(SynthSpec::distribution_a(), 4, 6);
  const auto b = synth_generate(SynthSpec::distribution_b(), 5, 6);
  const auto ids = a.patient_ids();
  const auto a_train = a.subset({ids[0], ids[1], ids[2]});
  const auto a_test = a.subset({ids[3]});

  UNetModel<float> baseline(tiny_model());
  const auto base_fit = fit(baseline, a_train, a_test, quick_train(), PipelineConfig{});

  FinetuneSpec spec;
  spec.n_schedule = {0, 1, 3};
  spec.finetune_epochs = 1;
  spec.seed = 12;
  SweepInputs in{&a_train, &a_test, &b, tiny_model(), quick_train(), PipelineConfig{}};
  test::TempDir dir("sweep");
  const auto r = finetune_sweep<float>(spec, baseline, &base_fit.state, in, dir.path());

  ASSERT_EQ(r.points.size(), 9u);
  EXPECT_EQ(r.b_eval_patients.size(), 2u);
  std::set<std::string> eval(r.b_eval_patients.begin(), r.b_eval_patients.end());
  for (auto m : spec.methods) {
    std::vector<std::string> previous;
    for (std::size_t n : spec.n_schedule) {
      const auto& p = r.point(m, n);
      ASSERT_EQ(p.added_patients.size(), n);
      EXPECT_TRUE(std::equal(previous.begin(), previous.end(), p.added_patients.begin()));
      for (const auto& id : p.added_patients) EXPECT_FALSE(eval.count(id)) << id;
      std::set<std::string> scored;
      for (const auto& v : p.b_eval.volumes) scored.insert(v.patient_id);
      EXPECT_EQ(scored, eval);
      previous = p.added_patients;
      EXPECT_TRUE(std::filesystem::exists(dir.path() / ("method" + std::to_string(int(m))) / ("n" + std::to_string(n)) /
                                          "metrics.json"));
    }
  }

  // Continuing from the baseline with nothing added is a no-op.
  for (auto m : {FinetuneMethod::kContinueCombined, FinetuneMethod::kContinueNewOnly}) {
    const auto& p = r.point(m, 0);
    EXPECT_TRUE(p.history.epochs.empty());
    EXPECT_EQ(evaluation_json(p.b_eval), evaluation_json(r.baseline_b));
    EXPECT_EQ(evaluation_json(p.a_test), evaluation_json(r.baseline_a_test));
  }

  const auto csv = test::CsvRows(r.curves_csv());
  ASSERT_EQ(csv.header, "method,n,evaluation_set,label,dice");
  EXPECT_EQ(csv.rows.size(), 3u * 3u * 3u * 4u);
  std::map<std::string, int> per_line;
  for (const auto& row : csv.rows) {
    const auto c1 = row.find(','), c2 = row.find(',', c1 + 1);
    const auto c4 = row.rfind(',');
    ++per_line[row.substr(0, c1) + "|" + row.substr(c2 + 1, c4 - c2 - 1)];
  }
  EXPECT_EQ(per_line.size(), 3u * 3u * 4u);
  for (const auto& [line, count] : per_line) EXPECT_EQ(count, 3) << line;

  const auto& best = r.best_point(FinetuneMethod::kRetrain);
  for (std::size_t n : spec.n_schedule)
    EXPECT_GE(best.b_eval.mean.at("Labels"), r.point(FinetuneMethod::kRetrain, n).b_eval.mean.at("Labels"));
}

TEST(Sweep, TooManyAddedPatientsRejected) {
  const auto a = synth_generate(SynthSpec::distribution_a(), 2, 6);
  const auto b = synth_generate(SynthSpec::distribution_b(), 3, 6);
  const auto ids = a.patient_ids();
  const auto a_train = a.subset({ids[0]});
  const auto a_test = a.subset({ids[1]});
  const UNetModel<float> baseline(tiny_model());
  FinetuneSpec spec;
  spec.n_schedule = {1, 3};
  SweepInputs in{&a_train, &a_test, &b, tiny_model(), quick_train(), PipelineConfig{}};
  EXPECT_THROW(finetune_sweep<float>(spec, baseline, nullptr, in), ConfigError);
}

TEST(Threads, EnvironmentVariable) {
  ::setenv("CARDISEG_THREADS", "3", 1);
  EXPECT_EQ(worker_threads_from_env(), 3u);
  ::setenv("CARDISEG_THREADS", "0", 1);
  EXPECT_EQ(worker_threads_from_env(), 1u);
  ::unsetenv("CARDISEG_THREADS");
  EXPECT_EQ(worker_threads_from_env(), 1u);
}

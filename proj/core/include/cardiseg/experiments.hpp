#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cardiseg/evaluation.hpp"
#include "cardiseg/splits.hpp"
#include "cardiseg/training.hpp"

namespace cardiseg {

/// Report keys: DSC_labels first, then the three foreground classes.
inline const std::array<std::string, 4> kReportLabels = {"Labels", "RV", "LV", "MYO"};

/// Per-volume scores plus mean and sample standard deviation per report label.
struct DatasetEvaluation {
  std::vector<VolumeScore> volumes;
  std::map<std::string, double> mean;
  std::map<std::string, double> sd;
};

DatasetEvaluation summarize_scores(std::vector<VolumeScore> volumes);

/// {"mean": {...}, "sd": {...}, "volumes": [...]} with two-space indentation.
std::string evaluation_json(const DatasetEvaluation& evaluation);

template <typename T>
DatasetEvaluation evaluate_on_dataset(const UNetModel<T>& model, const DatasetIndex& index,
                                      const PipelineConfig& pipeline, std::size_t batch_size);

enum class SplitStrategy { kAuto, kStratified, kRandom };
std::string to_string(SplitStrategy s);
SplitStrategy parse_split_strategy(const std::string& text);

struct CrossvalOptions {
  std::size_t k = 4;
  SplitStrategy split = SplitStrategy::kAuto;
  std::uint64_t split_seed = 0;
  /// Concurrent fold trainings; each fold owns its model.
  std::size_t threads = 1;
  /// When set, per-fold history.csv, checkpoint.bin and metrics.json land in
  /// `<output_dir>/fold<k>/`, plus an aggregate metrics.json.
  std::filesystem::path output_dir;
  /// Optional second cohort every fold model is also evaluated on.
  const DatasetIndex* unseen = nullptr;
};

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::string> train_patients;
  std::vector<std::string> test_patients;
  History history;
  DatasetEvaluation train;
  DatasetEvaluation test;
  std::optional<DatasetEvaluation> unseen;
};

template <typename T>
struct CrossvalResult {
  FoldAssignment assignment;
  std::vector<UNetModel<T>> models;
  std::vector<TrainState<T>> states;
  std::vector<FoldResult> folds;
};

/// One model per fold, trained on the other k-1 folds with the held-out fold
/// as validation set, then scored on its train split, its test split and the
/// optional unseen cohort. Fold f uses model seed mix(model.seed, f) and
/// training seed mix(train.seed, f).
template <typename T>
CrossvalResult<T> run_crossval(const DatasetIndex& index, const ModelConfig& model, const TrainConfig& train,
                               const PipelineConfig& pipeline, const CrossvalOptions& options);

/// Deterministic JSON of one fold (no timings).
std::string fold_metrics_json(const FoldResult& fold);
/// Deterministic JSON of all folds.
std::string crossval_metrics_json(const std::string& dataset, const std::vector<FoldResult>& folds);

/// Fold-level mean dice per report label for each evaluation modality.
struct FoldMetrics {
  std::size_t fold = 0;
  std::map<std::string, double> train;
  std::map<std::string, double> test;
  std::map<std::string, double> unseen;
};

FoldMetrics fold_metrics(const FoldResult& fold);

struct GapRow {
  std::string training_dataset;
  std::string evaluation_dataset;
  std::string modality;  // "train", "test" or "all"
  std::map<std::string, double> mean;
  std::map<std::string, double> sd;  // sample sd over folds
  std::map<std::string, std::vector<double>> fold_values;
};

struct GapReport {
  std::string training_dataset;
  std::string unseen_dataset;
  std::size_t folds = 0;
  std::vector<GapRow> rows;
  std::map<std::string, double> gap_train_test;    // mean(train) - mean(test)
  std::map<std::string, double> gap_train_unseen;  // mean(train) - mean(unseen)

  std::string to_json() const;
  static GapReport from_json(const std::string& text);
};

/// Assembles the train/test/unseen table from per-fold metrics. `crossval`
/// supplies train and test values, `unseen` the unseen-cohort values of the
/// same fold models. Throws ValidationError unless both cover the same folds
/// and every report label.
GapReport gap_report(const std::string& training_dataset, const std::string& unseen_dataset,
                     const std::vector<FoldMetrics>& crossval, const std::vector<FoldMetrics>& unseen);

enum class FinetuneMethod { kRetrain = 1, kContinueCombined = 2, kContinueNewOnly = 3 };
std::string to_string(FinetuneMethod m);

struct FinetuneSpec {
  std::vector<FinetuneMethod> methods = {FinetuneMethod::kRetrain, FinetuneMethod::kContinueCombined,
                                         FinetuneMethod::kContinueNewOnly};
  std::vector<std::size_t> n_schedule = {5, 21, 37, 53, 69, 85, 101, 117, 133, 150};
  /// Methods 2 and 3 start from fresh Adam moments at initial_lr.
  bool restart_optimizer = true;
  /// Epoch cap for methods 2 and 3; 0 keeps the training config's max_epochs.
  std::size_t finetune_epochs = 0;
  std::uint64_t seed = 0;

  /// Strictly increasing n (0 allowed), with n_max below the B patient count so
  /// the B evaluation set is never empty.
  void validate(std::size_t b_patients) const;
};

/// Nested draw: the first n entries of one seeded shuffle of B's patients.
std::vector<std::string> finetune_patient_order(const DatasetIndex& b, std::uint64_t seed);

struct SweepPoint {
  FinetuneMethod method = FinetuneMethod::kRetrain;
  std::size_t n = 0;
  std::vector<std::string> added_patients;
  History history;
  DatasetEvaluation a_train;
  DatasetEvaluation a_test;
  DatasetEvaluation b_eval;
};

struct SweepResult {
  std::vector<std::string> b_eval_patients;  // B minus the largest added set
  DatasetEvaluation baseline_a_train;
  DatasetEvaluation baseline_a_test;
  DatasetEvaluation baseline_b;
  std::vector<SweepPoint> points;

  /// method,n,evaluation_set,label,dice with one row per point, set and label.
  std::string curves_csv() const;
  const SweepPoint& point(FinetuneMethod method, std::size_t n) const;
  /// Highest B-evaluation DSC_labels of one method; ties go to the smaller n.
  const SweepPoint& best_point(FinetuneMethod method) const;
};

struct SweepInputs {
  const DatasetIndex* a_train = nullptr;
  const DatasetIndex* a_test = nullptr;
  const DatasetIndex* b = nullptr;
  ModelConfig model;
  TrainConfig train;
  PipelineConfig pipeline;
};

/// Runs every method for every n. Method 1 trains a fresh model (seed mixed
/// with n) on A-train plus the added B patients; methods 2 and 3 continue the
/// baseline on A-train plus added B, or on added B only. Finetuning runs have
/// no validation set and monitor their training loss. Every run is scored on
/// A-train, A-test and the fixed B evaluation set.
template <typename T>
SweepResult finetune_sweep(const FinetuneSpec& spec, const UNetModel<T>& baseline,
                           const TrainState<T>* baseline_state, const SweepInputs& inputs,
                           const std::filesystem::path& output_dir = {}, std::size_t threads = 1);

struct DeltaRow {
  std::string label;
  std::string modality;  // "A-train", "A-test" or "B-unseen"
  double baseline = 0.0;
  double finetuned = 0.0;
  double delta = 0.0;
};

/// finetuned - baseline per report label and evaluation set.
std::vector<DeltaRow> improvement_summary(const std::array<const DatasetEvaluation*, 3>& baseline,
                                          const std::array<const DatasetEvaluation*, 3>& finetuned);
std::string deltas_csv(const std::vector<DeltaRow>& rows);

/// Reads CARDISEG_THREADS (default 1, clamped to at least 1).
std::size_t worker_threads_from_env();

}  // namespace cardiseg

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cardiseg/experiments.hpp"
#include "cardiseg/preprocess.hpp"
#include "cardiseg/training.hpp"
#include "cardiseg/unet.hpp"

namespace cardiseg {

inline constexpr int kConfigSchemaVersion = 1;

enum class Precision { kF32, kF64 };
std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

struct DatasetSection {
  /// Training cohort manifest; empty selects synthetic distribution A.
  std::filesystem::path manifest;
  /// Unseen cohort manifest; empty selects synthetic distribution B.
  std::filesystem::path unseen_manifest;
  std::size_t synthetic_patients = 16;
  std::size_t synthetic_unseen_patients = 16;
  std::uint64_t synthetic_seed = 11;
};

struct ExperimentSection {
  std::size_t k = 4;
  SplitStrategy split = SplitStrategy::kAuto;
  /// Fold whose split trains the single model of `train` and `finetune`.
  std::size_t baseline_fold = 0;
  /// Worker count; 0 defers to CARDISEG_THREADS.
  std::size_t threads = 0;
  FinetuneSpec finetune;
};

/// Document layout:
///
///   {"schema_version": 1, "seed": 0, "precision": "f32",
///    "dataset": {...}, "preprocess": {...}, "model": {...},
///    "train": {..., "loss": {...}}, "experiment": {..., "finetune": {...}}}
///
/// Every field is optional; unknown fields are rejected with their JSON
/// pointer. The preprocessing target size always follows model.input_size.
/// Component seeds are mixed with the top-level seed, so `--seed` alone
/// reseeds a whole run.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  DatasetSection dataset;
  PipelineConfig preprocess;
  ModelConfig model;
  TrainConfig train;
  ExperimentSection experiment;

  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  /// Throws ConfigError (path "/") when the file is missing or unreadable.
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  ModelConfig seeded_model() const;
  TrainConfig seeded_train() const;
  PipelineConfig seeded_pipeline() const;
  std::uint64_t split_seed() const;
  FinetuneSpec seeded_finetune() const;
  std::size_t threads() const;
};

}  // namespace cardiseg

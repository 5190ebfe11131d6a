#include "cardiseg/config.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "cardiseg/random.hpp"
#include "json_util.hpp"

namespace cardiseg {

namespace detail {
ModelConfig read_model_config(const json& j, const std::string& path);
}

using detail::json;
using detail::ObjectReader;

std::string to_string(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::kF32;
  if (text == "f64") return Precision::kF64;
  throw ConfigError("expected f32 or f64, got '" + text + "'", "/precision");
}

namespace {

void read_dataset(const json& j, DatasetSection& d, const std::filesystem::path& base) {
  ObjectReader r(j, "/dataset");
  std::string manifest, unseen;
  r.read("manifest", manifest);
  r.read("unseen_manifest", unseen);
  if (const json* s = r.child("synthetic")) {
    ObjectReader rs(*s, "/dataset/synthetic");
    rs.read("patients", d.synthetic_patients);
    rs.read("unseen_patients", d.synthetic_unseen_patients);
    rs.read("seed", d.synthetic_seed);
    rs.finish();
  }
  r.finish();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
  };
  d.manifest = resolve(manifest);
  d.unseen_manifest = resolve(unseen);
  if (d.synthetic_patients < 2) throw ConfigError("must be at least 2", "/dataset/synthetic/patients");
}

void read_preprocess(const json& j, PipelineConfig& p) {
  ObjectReader r(j, "/preprocess");
  r.read("clip_quantile", p.clip_quantile);
  r.read("distortion_probability", p.distortion_probability);
  r.read("distortion_steps", p.distortion_steps);
  r.read("distortion_limit", p.distortion_limit);
  r.read("seed", p.seed);
  r.finish();
}

void read_loss(const json& j, LossSpec& loss) {
  ObjectReader r(j, "/train/loss");
  std::string kind = to_string(loss.kind);
  r.read("kind", kind);
  try {
    loss.kind = parse_loss_kind(kind);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "/train/loss/kind");
  }
  r.read("class_weights", loss.class_weights);
  r.read("smooth", loss.smooth);
  r.read("ignore_background", loss.ignore_background);
  r.finish();
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "/train");
  r.read("batch_size", t.batch_size);
  r.read("initial_lr", t.initial_lr);
  r.read("lr_factor", t.lr_factor);
  r.read("lr_patience", t.lr_patience);
  r.read("min_lr", t.min_lr);
  r.read("min_delta", t.min_delta);
  r.read("early_stop_patience", t.early_stop_patience);
  r.read("max_epochs", t.max_epochs);
  r.read("seed", t.seed);
  r.read("beta1", t.beta1);
  r.read("beta2", t.beta2);
  r.read("adam_epsilon", t.adam_epsilon);
  r.read("target_dsc", t.target_dsc);
  if (const json* l = r.child("loss")) read_loss(*l, t.loss);
  r.finish();
}

void read_finetune(const json& j, FinetuneSpec& f) {
  ObjectReader r(j, "/experiment/finetune");
  std::vector<int> methods;
  for (auto m : f.methods) methods.push_back(static_cast<int>(m));
  r.read("methods", methods);
  f.methods.clear();
  for (int m : methods) {
    if (m < 1 || m > 3) throw ConfigError("methods are 1, 2 or 3", "/experiment/finetune/methods");
    f.methods.push_back(static_cast<FinetuneMethod>(m));
  }
  r.read("n_schedule", f.n_schedule);
  r.read("restart_optimizer", f.restart_optimizer);
  r.read("finetune_epochs", f.finetune_epochs);
  r.read("seed", f.seed);
  r.finish();
}

void read_experiment(const json& j, ExperimentSection& e) {
  ObjectReader r(j, "/experiment");
  r.read("k", e.k);
  std::string split = to_string(e.split);
  r.read("split", split);
  e.split = parse_split_strategy(split);
  r.read("baseline_fold", e.baseline_fold);
  r.read("threads", e.threads);
  if (const json* f = r.child("finetune")) read_finetune(*f, e.finetune);
  r.finish();
  if (e.k < 2) throw ConfigError("must be at least 2", "/experiment/k");
  if (e.baseline_fold >= e.k) throw ConfigError("must be below k", "/experiment/baseline_fold");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "/");
  }
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.read("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported version " + std::to_string(c.schema_version), "/schema_version");
  }
  r.read("seed", c.seed);
  std::string precision = to_string(c.precision);
  r.read("precision", precision);
  c.precision = parse_precision(precision);
  if (const json* d = r.child("dataset")) read_dataset(*d, c.dataset, base_dir);
  if (const json* p = r.child("preprocess")) read_preprocess(*p, c.preprocess);
  if (const json* m = r.child("model")) c.model = detail::read_model_config(*m, "/model");
  if (const json* t = r.child("train")) read_train(*t, c.train);
  if (const json* e = r.child("experiment")) read_experiment(*e, c.experiment);
  r.finish();

  // Weighted cross-entropy without explicit weights doubles the myocardium.
  if (c.train.loss.kind == LossKind::kWCE && c.train.loss.class_weights.empty() && c.model.num_classes == kNumLabels) {
    c.train.loss.class_weights = {1.0, 1.0, 2.0, 1.0};
  }
  c.preprocess.target_height = c.model.input_height;
  c.preprocess.target_width = c.model.input_width;
  try {
    c.preprocess.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), e.path().empty() ? "/preprocess" : e.path());
  }
  c.train.validate(c.model.num_classes);
  // The B cohort size is only known at run time; check the schedule shape now.
  c.experiment.finetune.validate(std::numeric_limits<std::size_t>::max());
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string(), "/");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.parent_path());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  j["precision"] = to_string(precision);
  j["dataset"] = {{"manifest", dataset.manifest.string()},
                  {"unseen_manifest", dataset.unseen_manifest.string()},
                  {"synthetic",
                   {{"patients", dataset.synthetic_patients},
                    {"unseen_patients", dataset.synthetic_unseen_patients},
                    {"seed", dataset.synthetic_seed}}}};
  j["preprocess"] = {{"clip_quantile", preprocess.clip_quantile},
                     {"distortion_probability", preprocess.distortion_probability},
                     {"distortion_steps", preprocess.distortion_steps},
                     {"distortion_limit", preprocess.distortion_limit},
                     {"seed", preprocess.seed}};
  j["model"] = json::parse(model_config_to_json(model));
  j["train"] = {{"batch_size", train.batch_size},
                {"initial_lr", train.initial_lr},
                {"lr_factor", train.lr_factor},
                {"lr_patience", train.lr_patience},
                {"min_lr", train.min_lr},
                {"min_delta", train.min_delta},
                {"early_stop_patience", train.early_stop_patience},
                {"max_epochs", train.max_epochs},
                {"seed", train.seed},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_epsilon", train.adam_epsilon},
                {"target_dsc", train.target_dsc},
                {"loss",
                 {{"kind", to_string(train.loss.kind)},
                  {"class_weights", train.loss.class_weights},
                  {"smooth", train.loss.smooth},
                  {"ignore_background", train.loss.ignore_background}}}};
  std::vector<int> methods;
  for (auto m : experiment.finetune.methods) methods.push_back(static_cast<int>(m));
  j["experiment"] = {{"k", experiment.k},
                     {"split", to_string(experiment.split)},
                     {"baseline_fold", experiment.baseline_fold},
                     {"threads", experiment.threads},
                     {"finetune",
                      {{"methods", methods},
                       {"n_schedule", experiment.finetune.n_schedule},
                       {"restart_optimizer", experiment.finetune.restart_optimizer},
                       {"finetune_epochs", experiment.finetune.finetune_epochs},
                       {"seed", experiment.finetune.seed}}}};
  return j.dump(2) + "\n";
}

ModelConfig ExperimentConfig::seeded_model() const {
  ModelConfig m = model;
  m.seed = mix_seed({seed, hash_string("model"), model.seed});
  return m;
}

TrainConfig ExperimentConfig::seeded_train() const {
  TrainConfig t = train;
  t.seed = mix_seed({seed, hash_string("train"), train.seed});
  return t;
}

PipelineConfig ExperimentConfig::seeded_pipeline() const {
  PipelineConfig p = preprocess;
  p.seed = mix_seed({seed, hash_string("preprocess"), preprocess.seed});
  return p;
}

std::uint64_t ExperimentConfig::split_seed() const { return mix_seed({seed, hash_string("split")}); }

FinetuneSpec ExperimentConfig::seeded_finetune() const {
  FinetuneSpec f = experiment.finetune;
  f.seed = mix_seed({seed, hash_string("finetune"), experiment.finetune.seed});
  return f;
}

std::size_t ExperimentConfig::threads() const {
  return experiment.threads > 0 ? experiment.threads : worker_threads_from_env();
}

}  // namespace cardiseg

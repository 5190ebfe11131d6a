#include "cardiseg/splits.hpp"

#include <spdlog/spdlog.h>

#include "cardiseg/random.hpp"

namespace cardiseg {

std::vector<std::string> FoldAssignment::test_patients(std::size_t fold) const {
  if (fold >= k) throw ConfigError("fold index out of range");
  std::vector<std::string> out;
  for (const auto& p : patients) {
    if (fold_of.at(p) == fold) out.push_back(p);
  }
  return out;
}

std::vector<std::string> FoldAssignment::train_patients(std::size_t fold) const {
  if (fold >= k) throw ConfigError("fold index out of range");
  std::vector<std::string> out;
  for (const auto& p : patients) {
    if (fold_of.at(p) != fold) out.push_back(p);
  }
  return out;
}

std::size_t FoldAssignment::fold_size(std::size_t fold) const { return test_patients(fold).size(); }

namespace {

void check_k(const DatasetIndex& index, std::size_t k) {
  if (k < 2) throw ConfigError("k must be at least 2", "/experiment/k");
  if (index.empty()) throw ConfigError("cannot split an empty dataset");
}

}  // namespace

FoldAssignment stratified_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed) {
  check_k(index, k);
  FoldAssignment out;
  out.k = k;
  out.patients = index.patient_ids();
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& p : out.patients) {
    const auto& tag = index.pathology_of(p);
    if (tag.empty()) throw ConfigError("patient " + p + " has no pathology tag");
    strata[tag].push_back(p);
  }
  std::size_t next = 0;
  for (auto& [pathology, members] : strata) {
    if (members.size() < k) {
      out.warnings.push_back("pathology " + pathology + " has " + std::to_string(members.size()) +
                             " patients, fewer than k = " + std::to_string(k));
      spdlog::warn("{}", out.warnings.back());
    }
    Rng rng(mix_seed({seed, hash_string(pathology)}));
    rng.shuffle(std::span<std::string>(members));
    for (const auto& p : members) {
      out.fold_of[p] = next;
      next = (next + 1) % k;
    }
  }
  return out;
}

FoldAssignment random_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed) {
  check_k(index, k);
  FoldAssignment out;
  out.k = k;
  out.patients = index.patient_ids();
  if (out.patients.size() < k) {
    out.warnings.push_back("only " + std::to_string(out.patients.size()) + " patients for k = " + std::to_string(k));
    spdlog::warn("{}", out.warnings.back());
  }
  auto order = out.patients;
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(order));
  for (std::size_t i = 0; i < order.size(); ++i) out.fold_of[order[i]] = i % k;
  return out;
}

FoldAssignment auto_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed) {
  for (const auto& p : index.patient_ids()) {
    if (index.pathology_of(p).empty()) return random_kfold(index, k, seed);
  }
  return stratified_kfold(index, k, seed);
}

}  // namespace cardiseg

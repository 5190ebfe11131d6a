#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cardiseg/dataset.hpp"

namespace cardiseg {

/// Patient-level k-fold partition. Fold f's test set holds the patients
/// assigned to f; its training set holds everyone else.
struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::string> patients;           // index order
  std::map<std::string, std::size_t> fold_of;  // patient -> fold
  std::vector<std::string> warnings;

  std::vector<std::string> test_patients(std::size_t fold) const;
  std::vector<std::string> train_patients(std::size_t fold) const;
  std::size_t fold_size(std::size_t fold) const;
};

/// Within each pathology (processed in sorted name order) patients are
/// shuffled and dealt round-robin; the deal position carries over between
/// pathologies so fold totals also stay balanced. Pathologies with fewer
/// than k patients produce a warning.
FoldAssignment stratified_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed);

/// Patient-level shuffle and deal; fold sizes differ by at most one.
FoldAssignment random_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed);

/// Stratified when every patient has a non-empty pathology tag, random otherwise.
FoldAssignment auto_kfold(const DatasetIndex& index, std::size_t k, std::uint64_t seed);

}  // namespace cardiseg

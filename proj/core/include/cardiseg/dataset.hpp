#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cardiseg/image.hpp"
#include "cardiseg/tensor.hpp"

namespace cardiseg {

/// Cardiac phases. Two-phase collections only use ED and ES.
enum class Phase : std::uint8_t { kED, kMS, kES, kPF, kMD };

std::string to_string(Phase phase);
Phase parse_phase(std::string_view text);

/// Integer label coding of mask voxels.
enum Label : std::uint8_t { kBackground = 0, kRV = 1, kMYO = 2, kLV = 3 };
inline constexpr std::size_t kNumLabels = 4;
inline constexpr std::array<Label, 3> kForegroundLabels = {kRV, kMYO, kLV};
std::string label_name(std::size_t label);

struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct VolumeSample {
  std::string patient_id;
  std::string pathology;
  Phase phase = Phase::kED;
  Volume3D<float> image;
  Volume3D<std::uint8_t> mask;
  Spacing spacing;

  /// Throws ValidationError on extent mismatch, labels outside {0..3} or
  /// non-positive spacing.
  void validate() const;
};

/// Immutable collection of volumes. Copies share the underlying samples.
class DatasetIndex {
 public:
  DatasetIndex() = default;
  DatasetIndex(std::string provenance, std::vector<std::shared_ptr<const VolumeSample>> samples);

  const std::string& provenance() const noexcept { return provenance_; }
  const std::vector<std::shared_ptr<const VolumeSample>>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t slice_count() const;

  /// Patient ids in order of first appearance.
  std::vector<std::string> patient_ids() const;
  /// Pathology tag of a patient; throws if the id is unknown.
  const std::string& pathology_of(const std::string& patient_id) const;
  /// Volumes of the given patients, preserving index order.
  DatasetIndex subset(const std::vector<std::string>& patient_ids) const;
  /// Concatenation; provenance joined with '+' when they differ.
  DatasetIndex merged(const DatasetIndex& other) const;

 private:
  std::string provenance_;
  std::vector<std::shared_ptr<const VolumeSample>> samples_;
};

/// [slices, num_classes, H, W] indicator array; channels sum to one per voxel.
Tensor<float> one_hot(const Volume3D<std::uint8_t>& mask, std::size_t num_classes = kNumLabels);

/// Channel argmax of a [B, C, H, W] tensor into a [B, H, W] label volume.
/// Ties go to the lowest channel.
template <typename T>
Volume3D<std::uint8_t> argmax_labels(const Tensor<T>& scores);

}  // namespace cardiseg

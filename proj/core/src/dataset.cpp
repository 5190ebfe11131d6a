#include "cardiseg/dataset.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

namespace cardiseg {

namespace {
constexpr std::array<const char*, 5> kPhaseNames = {"ED", "MS", "ES", "PF", "MD"};
constexpr std::array<const char*, 4> kLabelNames = {"background", "RV", "MYO", "LV"};
}  // namespace

std::string to_string(Phase phase) { return kPhaseNames.at(static_cast<std::size_t>(phase)); }

Phase parse_phase(std::string_view text) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i) {
    if (text == kPhaseNames[i]) return static_cast<Phase>(i);
  }
  throw ValidationError("unknown phase '" + std::string(text) + "' (expected ED, MS, ES, PF or MD)");
}

std::string label_name(std::size_t label) {
  if (label >= kLabelNames.size()) throw ValidationError("unknown label " + std::to_string(label));
  return kLabelNames[label];
}

void VolumeSample::validate() const {
  const std::string who = patient_id + "/" + to_string(phase);
  if (image.voxels.empty()) throw ValidationError(who + ": empty image volume");
  if (!mask.same_extents(image.slices, image.height, image.width)) {
    throw ValidationError(who + ": image and mask extents differ");
  }
  if (image.voxels.size() != image.slices * image.plane() || mask.voxels.size() != mask.slices * mask.plane()) {
    throw ValidationError(who + ": voxel buffer does not match extents");
  }
  for (std::uint8_t v : mask.voxels) {
    if (v >= kNumLabels) throw ValidationError(who + ": mask contains label " + std::to_string(v));
  }
  if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError(who + ": spacing must be positive");
}

DatasetIndex::DatasetIndex(std::string provenance, std::vector<std::shared_ptr<const VolumeSample>> samples)
    : provenance_(std::move(provenance)), samples_(std::move(samples)) {
  for (const auto& s : samples_) {
    if (!s) throw ValidationError("dataset contains a null sample");
  }
  // A patient carries one pathology tag.
  for (const auto& s : samples_) {
    if (pathology_of(s->patient_id) != s->pathology) {
      throw ValidationError("patient " + s->patient_id + " has conflicting pathology tags");
    }
  }
}

std::size_t DatasetIndex::slice_count() const {
  std::size_t n = 0;
  for (const auto& s : samples_) n += s->image.slices;
  return n;
}

std::vector<std::string> DatasetIndex::patient_ids() const {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples_) {
    if (seen.insert(s->patient_id).second) ids.push_back(s->patient_id);
  }
  return ids;
}

const std::string& DatasetIndex::pathology_of(const std::string& patient_id) const {
  for (const auto& s : samples_) {
    if (s->patient_id == patient_id) return s->pathology;
  }
  throw ValidationError("unknown patient " + patient_id);
}

DatasetIndex DatasetIndex::subset(const std::vector<std::string>& patient_ids) const {
  const std::set<std::string> wanted(patient_ids.begin(), patient_ids.end());
  std::vector<std::shared_ptr<const VolumeSample>> picked;
  for (const auto& s : samples_) {
    if (wanted.count(s->patient_id)) picked.push_back(s);
  }
  DatasetIndex out;
  out.provenance_ = provenance_;
  out.samples_ = std::move(picked);
  return out;
}

DatasetIndex DatasetIndex::merged(const DatasetIndex& other) const {
  auto samples = samples_;
  samples.insert(samples.end(), other.samples_.begin(), other.samples_.end());
  std::string provenance = provenance_;
  if (other.provenance_ != provenance_) provenance += "+" + other.provenance_;
  return DatasetIndex(std::move(provenance), std::move(samples));
}

Tensor<float> one_hot(const Volume3D<std::uint8_t>& mask, std::size_t num_classes) {
  if (mask.voxels.empty()) throw ShapeError("one_hot of an empty mask");
  Tensor<float> out({mask.slices, num_classes, mask.height, mask.width}, 0.0f);
  auto data = out.data();
  const std::size_t plane = mask.plane();
  for (std::size_t s = 0; s < mask.slices; ++s) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t c = mask.voxels[s * plane + i];
      if (c >= num_classes) throw ValidationError("label value " + std::to_string(c) + " out of range");
      data[(s * num_classes + c) * plane + i] = 1.0f;
    }
  }
  return out;
}

template <typename T>
Volume3D<std::uint8_t> argmax_labels(const Tensor<T>& scores) {
  require_rank4(scores, "argmax_labels");
  const std::size_t b = scores.dim(0), c = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  if (c > 256) throw ShapeError("argmax_labels supports at most 256 channels");
  Volume3D<std::uint8_t> out(b, h, w);
  const auto data = scores.data();
  const std::size_t plane = h * w;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      T best_value = data[n * c * plane + i];
      for (std::size_t k = 1; k < c; ++k) {
        const T v = data[(n * c + k) * plane + i];
        if (v > best_value) {
          best_value = v;
          best = k;
        }
      }
      out.voxels[n * plane + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template Volume3D<std::uint8_t> argmax_labels(const Tensor<float>&);
template Volume3D<std::uint8_t> argmax_labels(const Tensor<double>&);

}  // namespace cardiseg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cardiseg/dataset.hpp"

namespace cardiseg {

enum class Distribution { kA, kB };

std::string to_string(Distribution d);
Distribution parse_distribution(const std::string& text);

/// Geometry and acquisition ranges of a ring-and-blob cardiac phantom
/// cohort. Lengths are millimetres. Each range is sampled uniformly per
/// patient (geometry) or per volume (acquisition).
struct SynthSpec {
  Distribution distribution = Distribution::kA;
  std::vector<std::string> pathologies;  // dealt round-robin over patients
  std::vector<Phase> phases = {Phase::kED, Phase::kES};
  std::size_t min_slices = 4, max_slices = 6;
  std::size_t min_extent = 60, max_extent = 84;  // in-plane pixels, H and W independent
  double min_spacing = 1.25, max_spacing = 1.75;
  double lv_radius_min = 11.0, lv_radius_max = 15.0;
  double myo_thickness_min = 5.0, myo_thickness_max = 7.0;
  double rv_scale_min = 1.2, rv_scale_max = 1.5;   // RV radius relative to LV radius
  double rv_irregularity = 0.0;                    // relative amplitude of boundary harmonics
  double noise_sd = 0.04;
  double outlier_fraction = 0.0005;

  /// Normal-range geometry with five pathology groups.
  static SynthSpec distribution_a();
  /// Enlarged RV with an irregular boundary; four severity groups.
  static SynthSpec distribution_b();

  void validate() const;
};

/// Deterministic phantom cohort: every patient gets one volume per phase
/// with an exact label mask. Patient ids are "<A|B><index>" zero-padded.
DatasetIndex synth_generate(const SynthSpec& spec, std::size_t n_patients, std::uint64_t seed);

}  // namespace cardiseg

#include "cardiseg/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "cardiseg/random.hpp"

namespace cardiseg {

std::string to_string(Distribution d) { return d == Distribution::kA ? "A" : "B"; }

Distribution parse_distribution(const std::string& text) {
  if (text == "A") return Distribution::kA;
  if (text == "B") return Distribution::kB;
  throw ConfigError("distribution must be \"A\" or \"B\", got \"" + text + "\"");
}

SynthSpec SynthSpec::distribution_a() {
  SynthSpec s;
  s.distribution = Distribution::kA;
  s.pathologies = {"NOR", "MINF", "DCM", "HCM", "ARV"};
  return s;
}

SynthSpec SynthSpec::distribution_b() {
  SynthSpec s;
  s.distribution = Distribution::kB;
  s.pathologies = {"TOF1", "TOF2", "TOF3", "TOF4"};
  s.rv_scale_min = 1.9;
  s.rv_scale_max = 2.6;
  s.rv_irregularity = 0.2;
  return s;
}

void SynthSpec::validate() const {
  auto range = [](double lo, double hi, const char* what) {
    if (!(lo > 0.0 && lo <= hi && std::isfinite(hi))) {
      throw ConfigError(std::string("degenerate synthetic range: ") + what);
    }
  };
  if (pathologies.empty()) throw ConfigError("synthetic spec needs at least one pathology");
  if (phases.empty()) throw ConfigError("synthetic spec needs at least one phase");
  if (min_slices == 0 || min_slices > max_slices) throw ConfigError("degenerate synthetic range: slices");
  if (min_extent < 16 || min_extent > max_extent) throw ConfigError("degenerate synthetic range: extent (>= 16)");
  range(min_spacing, max_spacing, "spacing");
  range(lv_radius_min, lv_radius_max, "lv_radius");
  range(myo_thickness_min, myo_thickness_max, "myo_thickness");
  range(rv_scale_min, rv_scale_max, "rv_scale");
  if (!(rv_irregularity >= 0.0 && rv_irregularity < 0.5)) throw ConfigError("rv_irregularity must lie in [0, 0.5)");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 0.1)) throw ConfigError("outlier_fraction must lie in [0, 0.1)");
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Blob {
  double x, y, radius, intensity;
};

// Geometry fixed per patient; phase and slice position scale it.
struct Heart {
  double cx, cy;                 // LV centre relative to the image centre, mm
  double lv_radius;              // ED, basal slice
  double myo_thickness;
  double es_contraction;         // LV radius factor at ES
  double infarct_angle = 0.0;    // centre of a thinned myocardial sector
  double infarct_depth = 0.0;    // relative thinning inside that sector
  double rv_angle;               // direction from LV centre to RV centre
  double rv_scale;
  double rv_irregularity;
  double rv_phase1, rv_phase2;
  std::vector<Blob> distractors;  // bright vessels and dark lung patches
  double texture[3][3];           // low-frequency background texture (kx, ky, phase)
};

struct SliceShape {
  double cx, cy, r_lv, thickness, rv_cx, rv_cy, r_rv, septum;
};

double phase_fraction(Phase p) {
  switch (p) {
    case Phase::kED: return 0.0;
    case Phase::kMS: return 0.6;
    case Phase::kES: return 1.0;
    case Phase::kPF: return 0.8;
    case Phase::kMD: return 0.3;
  }
  return 0.0;
}

Heart sample_heart(const SynthSpec& spec, const std::string& pathology, std::size_t severity, Rng& rng) {
  Heart h{};
  h.lv_radius = rng.uniform(spec.lv_radius_min, spec.lv_radius_max);
  h.myo_thickness = rng.uniform(spec.myo_thickness_min, spec.myo_thickness_max);
  h.es_contraction = rng.uniform(0.66, 0.76);
  h.rv_angle = kPi + rng.uniform(-0.35, 0.35);
  h.rv_scale = rng.uniform(spec.rv_scale_min, spec.rv_scale_max);
  h.rv_irregularity = spec.rv_irregularity;
  h.rv_phase1 = rng.uniform(0.0, 2.0 * kPi);
  h.rv_phase2 = rng.uniform(0.0, 2.0 * kPi);
  h.infarct_angle = rng.uniform(0.0, 2.0 * kPi);
  if (pathology == "DCM") {
    h.lv_radius *= 1.22;
    h.myo_thickness *= 0.8;
    h.es_contraction = rng.uniform(0.85, 0.92);
  } else if (pathology == "HCM") {
    h.lv_radius *= 0.85;
    h.myo_thickness *= 1.45;
  } else if (pathology == "MINF") {
    h.infarct_depth = 0.45;
    h.es_contraction = rng.uniform(0.78, 0.86);
  } else if (pathology == "ARV") {
    h.rv_scale *= 1.1;
  }
  if (spec.distribution == Distribution::kB) {
    // Severity groups split the RV range into increasing bands.
    const double bands = static_cast<double>(std::max<std::size_t>(spec.pathologies.size(), 1));
    const double lo = spec.rv_scale_min + (spec.rv_scale_max - spec.rv_scale_min) * severity / bands;
    const double hi = spec.rv_scale_min + (spec.rv_scale_max - spec.rv_scale_min) * (severity + 1) / bands;
    h.rv_scale = rng.uniform(lo, hi);
    h.rv_irregularity = spec.rv_irregularity * (0.6 + 0.4 * (severity + 1) / bands);
  }
  // Centre the LV+RV complex: shift the LV away from the RV side.
  const double shift = 0.35 * h.rv_scale * h.lv_radius;
  h.cx = -shift * std::cos(h.rv_angle) + rng.uniform(-5.0, 5.0);
  h.cy = -shift * std::sin(h.rv_angle) + rng.uniform(-5.0, 5.0);

  const std::size_t n_blobs = 2 + rng.below(3);
  for (std::size_t i = 0; i < n_blobs; ++i) {
    Blob b{};
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double dist = h.lv_radius * (2.6 + h.rv_scale) + rng.uniform(4.0, 16.0);
    b.x = h.cx + dist * std::cos(angle);
    b.y = h.cy + dist * std::sin(angle);
    b.radius = rng.uniform(3.0, 8.0);
    b.intensity = rng.bernoulli(0.6) ? rng.uniform(0.7, 0.9) : rng.uniform(0.05, 0.15);
    h.distractors.push_back(b);
  }
  for (auto& t : h.texture) {
    t[0] = rng.uniform(-0.08, 0.08);
    t[1] = rng.uniform(-0.08, 0.08);
    t[2] = rng.uniform(0.0, 2.0 * kPi);
  }
  return h;
}

SliceShape slice_shape(const Heart& h, Phase phase, std::size_t slice, std::size_t slices) {
  const double depth = slices > 1 ? static_cast<double>(slice) / static_cast<double>(slices - 1) : 0.0;
  const double f = phase_fraction(phase);
  const double lv_depth = 1.0 - 0.45 * std::pow(depth, 1.3);
  const double rv_depth = 1.0 - 0.6 * depth;
  SliceShape s{};
  s.cx = h.cx;
  s.cy = h.cy;
  s.r_lv = h.lv_radius * lv_depth * (1.0 - f * (1.0 - h.es_contraction));
  s.thickness = h.myo_thickness * (1.0 + 0.3 * f) * (0.85 + 0.15 * lv_depth);
  s.r_rv = h.lv_radius * h.rv_scale * rv_depth * (1.0 - 0.22 * f);
  const double r_epi = s.r_lv + s.thickness;
  const double d = r_epi + 0.25 * s.r_rv;
  s.rv_cx = h.cx + d * std::cos(h.rv_angle);
  s.rv_cy = h.cy + d * std::sin(h.rv_angle);
  s.septum = 1.0;
  return s;
}

std::uint8_t label_at(const Heart& h, const SliceShape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double r = std::hypot(dx, dy);
  if (r < s.r_lv) return kLV;
  double thickness = s.thickness;
  if (h.infarct_depth > 0.0) {
    const double diff = std::remainder(std::atan2(dy, dx) - h.infarct_angle, 2.0 * kPi);
    if (std::abs(diff) < 0.6) thickness *= 1.0 - h.infarct_depth * std::cos(diff / 0.6 * kPi / 2.0);
  }
  if (r < s.r_lv + thickness) return kMYO;
  if (r < s.r_lv + s.thickness + s.septum) return kBackground;
  const double rx = x - s.rv_cx, ry = y - s.rv_cy;
  const double phi = std::atan2(ry, rx);
  const double boundary =
      s.r_rv * (1.0 + h.rv_irregularity * (0.6 * std::sin(2.0 * phi + h.rv_phase1) +
                                           0.4 * std::sin(3.0 * phi + h.rv_phase2)));
  if (std::hypot(rx, ry) < boundary) return kRV;
  return kBackground;
}

double tissue_at(const Heart& h, double x, double y, double half_w, double half_h) {
  // Body ellipse with a smooth texture; air outside.
  const double ex = x / (0.95 * half_w), ey = y / (0.95 * half_h);
  if (ex * ex + ey * ey > 1.0) return 0.04;
  double v = 0.45;
  for (const auto& t : h.texture) v += 0.06 * std::sin(t[0] * x + t[1] * y + t[2]);
  for (const auto& b : h.distractors) {
    if (std::hypot(x - b.x, y - b.y) < b.radius) return b.intensity;
  }
  return v;
}

double intensity_at(const Heart& h, const SliceShape& s, double x, double y, double half_w, double half_h) {
  switch (label_at(h, s, x, y)) {
    case kLV: return 0.86;
    case kRV: return 0.8;
    case kMYO: return 0.24;
    default: return tissue_at(h, x, y, half_w, half_h);
  }
}

std::shared_ptr<const VolumeSample> make_volume(const SynthSpec& spec, const Heart& heart, const std::string& id,
                                                const std::string& pathology, Phase phase, std::size_t slices,
                                                std::size_t height, std::size_t width, const Spacing& spacing,
                                                Rng& rng) {
  auto sample = std::make_shared<VolumeSample>();
  sample->patient_id = id;
  sample->pathology = pathology;
  sample->phase = phase;
  sample->spacing = spacing;
  sample->image = Volume3D<float>(slices, height, width);
  sample->mask = Volume3D<std::uint8_t>(slices, height, width);

  const double gain = rng.uniform(300.0, 1500.0);
  const double bias_x = rng.uniform(-0.2, 0.2), bias_y = rng.uniform(-0.2, 0.2);
  const double half_w = 0.5 * static_cast<double>(width) * spacing.x;
  const double half_h = 0.5 * static_cast<double>(height) * spacing.y;
  constexpr int kSuper = 3;
  for (std::size_t z = 0; z < slices; ++z) {
    const SliceShape shape = slice_shape(heart, phase, z, slices);
    for (std::size_t yi = 0; yi < height; ++yi) {
      for (std::size_t xi = 0; xi < width; ++xi) {
        const double x = (static_cast<double>(xi) + 0.5) * spacing.x - half_w;
        const double y = (static_cast<double>(yi) + 0.5) * spacing.y - half_h;
        sample->mask.at(z, yi, xi) = label_at(heart, shape, x, y);
        // Supersampled intensity gives partial-volume edges.
        double acc = 0.0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double ox = (sx - 1) * spacing.x / kSuper, oy = (sy - 1) * spacing.y / kSuper;
            acc += intensity_at(heart, shape, x + ox, y + oy, half_w, half_h);
          }
        }
        double v = acc / (kSuper * kSuper);
        v *= 1.0 + bias_x * x / half_w + bias_y * y / half_h;
        v += rng.normal(0.0, spec.noise_sd);
        v = std::abs(v) * gain;
        if (rng.bernoulli(spec.outlier_fraction)) v = gain * rng.uniform(8.0, 14.0);
        sample->image.at(z, yi, xi) = static_cast<float>(v);
      }
    }
  }
  return sample;
}

}  // namespace

DatasetIndex synth_generate(const SynthSpec& spec, std::size_t n_patients, std::uint64_t seed) {
  spec.validate();
  if (n_patients == 0) throw ConfigError("synthetic cohort needs at least one patient");
  std::vector<std::shared_ptr<const VolumeSample>> samples;
  const std::string prefix = to_string(spec.distribution);
  for (std::size_t i = 0; i < n_patients; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s%03zu", prefix.c_str(), i);
    const std::size_t group = i % spec.pathologies.size();
    const std::string& pathology = spec.pathologies[group];
    Rng rng(mix_seed({seed, hash_string(prefix), i}));
    const Heart heart = sample_heart(spec, pathology, group, rng);
    const std::size_t slices = spec.min_slices + rng.below(spec.max_slices - spec.min_slices + 1);
    const std::size_t height = spec.min_extent + rng.below(spec.max_extent - spec.min_extent + 1);
    const std::size_t width = spec.min_extent + rng.below(spec.max_extent - spec.min_extent + 1);
    const double inplane = rng.uniform(spec.min_spacing, spec.max_spacing);
    const Spacing spacing{rng.uniform(5.0, 10.0), inplane, inplane};
    for (Phase phase : spec.phases) {
      Rng volume_rng(mix_seed({seed, hash_string(id), static_cast<std::uint64_t>(phase)}));
      auto s = make_volume(spec, heart, id, pathology, phase, slices, height, width, spacing, volume_rng);
      s->validate();
      samples.push_back(std::move(s));
    }
  }
  return DatasetIndex(prefix, std::move(samples));
}

}  // namespace cardiseg

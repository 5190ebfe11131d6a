#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cardiseg/dataset.hpp"
#include "cardiseg/error.hpp"
#include "cardiseg/random.hpp"
#include "cardiseg/splits.hpp"
#include "cardiseg/synth.hpp"
#include "cardiseg/volume_io.hpp"
#include "test_support.hpp"

using namespace cardiseg;

namespace {

// Index of tiny placeholder volumes, one per patient.
DatasetIndex tagged_index(const std::vector<std::pair<std::string, std::string>>& patients) {
  std::vector<std::shared_ptr<const VolumeSample>> samples;
  for (const auto& [id, pathology] : patients) {
    auto s = std::make_shared<VolumeSample>();
    s->patient_id = id;
    s->pathology = pathology;
    s->image = Volume3D<float>(1, 2, 2);
    s->mask = Volume3D<std::uint8_t>(1, 2, 2);
    samples.push_back(std::move(s));
  }
  return DatasetIndex("T", std::move(samples));
}

DatasetIndex stratified_cohort(std::size_t groups, std::size_t per_group) {
  std::vector<std::pair<std::string, std::string>> p;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < per_group; ++i) p.emplace_back("P" + std::to_string(g * 100 + i), "G" + std::to_string(g));
  return tagged_index(p);
}

DatasetIndex untagged_cohort(std::size_t n) {
  std::vector<std::pair<std::string, std::string>> p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back("U" + std::to_string(i), "");
  return tagged_index(p);
}

void expect_partition(const FoldAssignment& a, const DatasetIndex& index) {
  std::set<std::string> all(a.patients.begin(), a.patients.end());
  EXPECT_EQ(all.size(), index.patient_ids().size());
  for (std::size_t f = 0; f < a.k; ++f) {
    const auto test = a.test_patients(f);
    const auto train = a.train_patients(f);
    EXPECT_EQ(test.size() + train.size(), all.size());
    std::set<std::string> t(test.begin(), test.end());
    for (const auto& p : train) EXPECT_FALSE(t.count(p)) << p;
  }
  std::multiset<std::string> tested;
  for (std::size_t f = 0; f < a.k; ++f)
    for (const auto& p : a.test_patients(f)) tested.insert(p);
  EXPECT_EQ(tested.size(), all.size());
  for (const auto& p : all) EXPECT_EQ(tested.count(p), 1u);
}

Volume3D<float> random_volume(std::size_t s, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D<float> v(s, h, w);
  for (auto& x : v.voxels) x = static_cast<float>(rng.normal(100, 30));
  return v;
}

Volume3D<std::uint8_t> random_labels(std::size_t s, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D<std::uint8_t> v(s, h, w);
  for (auto& x : v.voxels) x = static_cast<std::uint8_t>(rng.below(4));
  return v;
}

}  // namespace

TEST(RawFormat, RoundTripIsBitExact) {
  test::TempDir dir("raw");
  const auto img = random_volume(3, 5, 7, 1);
  const auto lab = random_labels(3, 5, 7, 2);
  const Spacing sp{8.0, 1.25, 1.5};
  write_raw(dir / "img.json", img, sp);
  write_raw(dir / "lab.json", lab, sp);
  const auto ri = read_raw(dir / "img.json");
  const auto rl = read_raw_labels(dir / "lab.json");
  EXPECT_EQ(ri.volume, img);
  EXPECT_EQ(ri.spacing, sp);
  EXPECT_EQ(rl.volume, lab);
}

TEST(Nifti, RoundTripPreservesValuesAndHeader) {
  test::TempDir dir("nii");
  const auto img = random_volume(4, 6, 5, 3);
  const auto lab = random_labels(4, 6, 5, 4);
  const Spacing sp{10.0, 1.4, 1.3};
  for (std::string ext : {".nii", ".nii.gz"}) {
    write_nifti(dir / ("img" + ext), img, sp);
    write_nifti(dir / ("lab" + ext), lab, sp);
    const auto ri = read_nifti(dir / ("img" + ext));
    EXPECT_EQ(ri.volume, img) << ext;
    EXPECT_NEAR(ri.spacing.z, sp.z, 1e-6);
    EXPECT_NEAR(ri.spacing.y, sp.y, 1e-6);
    EXPECT_NEAR(ri.spacing.x, sp.x, 1e-6);
    EXPECT_EQ(read_nifti_labels(dir / ("lab" + ext)).volume, lab) << ext;
  }
}

TEST(Nifti, MalformedHeaderIsParseError) {
  test::TempDir dir("badnii");
  test::write_file(dir / "x.nii", std::string(100, 'x'));
  EXPECT_THROW(read_nifti(dir / "x.nii"), ParseError);
  test::write_file(dir / "y.nii", std::string(400, '\0'));
  EXPECT_THROW(read_nifti(dir / "y.nii"), ParseError);
}

TEST(LoadVolume, RejectsUnknownLabelAndShapeMismatch) {
  test::TempDir dir("vol");
  const Spacing sp{};
  write_raw(dir / "img.json", random_volume(2, 4, 4, 5), sp);
  auto lab = random_labels(2, 4, 4, 6);
  write_raw(dir / "ok.json", lab, sp);
  EXPECT_NO_THROW(load_volume(dir / "img.json", dir / "ok.json"));
  lab.at(1, 2, 3) = 4;
  write_raw(dir / "four.json", lab, sp);
  EXPECT_THROW(load_volume(dir / "img.json", dir / "four.json"), ValidationError);
  write_raw(dir / "small.json", random_labels(2, 4, 3, 7), sp);
  EXPECT_THROW(load_volume(dir / "img.json", dir / "small.json"), ValidationError);
}

TEST(Manifest, WriteAndLoadRoundTrip) {
  test::TempDir dir("man");
  auto spec = SynthSpec::distribution_a();
  const auto index = synth_generate(spec, 3, 12);
  write_dataset(dir / "ds", index);
  const auto loaded = load_manifest(dir / "ds" / "manifest.json", "A");
  ASSERT_EQ(loaded.size(), index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& a = *index.samples()[i];
    const auto& b = *loaded.samples()[i];
    EXPECT_EQ(a.patient_id, b.patient_id);
    EXPECT_EQ(a.pathology, b.pathology);
    EXPECT_EQ(a.phase, b.phase);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_EQ(a.spacing, b.spacing);
  }
  test::write_file(dir / "bad.json", R"([{"patient_id": "x"}])");
  EXPECT_ANY_THROW(load_manifest(dir / "bad.json"));
}

TEST(OneHot, BackgroundVoxel) {
  const auto oh = one_hot(Volume3D<std::uint8_t>(1, 1, 1, 0));
  EXPECT_EQ(oh.shape(), (Shape{1, 4, 1, 1}));
  EXPECT_EQ(test::values(oh), (std::vector<float>{1, 0, 0, 0}));
  Volume3D<std::uint8_t> bad(1, 1, 1, 5);
  EXPECT_ANY_THROW(one_hot(bad));
}

TEST(OneHot, ChannelSumsEqualLabelHistogram) {
  const auto lab = random_labels(3, 9, 11, 8);
  std::map<int, std::size_t> hist;
  for (auto v : lab.voxels) ++hist[v];
  const auto oh = one_hot(lab);
  const std::size_t plane = 9 * 11;
  for (std::size_t c = 0; c < 4; ++c) {
    double sum = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < plane; ++i) sum += oh[(s * 4 + c) * plane + i];
    EXPECT_EQ(sum, static_cast<double>(hist[static_cast<int>(c)]));
  }
  EXPECT_EQ(argmax_labels(oh), lab);
}

TEST(Argmax, TiesGoToLowestChannel) {
  Tensor<float> t({1, 4, 1, 2}, {0.2f, 0.1f, 0.5f, 0.7f, 0.5f, 0.9f, 0.1f, 0.0f});
  const auto l = argmax_labels(t);
  EXPECT_EQ(l.voxels, (std::vector<std::uint8_t>{1, 2}));
}

TEST(Stratified, FivePathologiesOfTwenty) {
  const auto index = stratified_cohort(5, 20);
  const auto a = stratified_kfold(index, 4, 1);
  expect_partition(a, index);
  EXPECT_TRUE(a.warnings.empty());
  for (std::size_t f = 0; f < 4; ++f) {
    std::map<std::string, int> test_count, train_count;
    for (const auto& p : a.test_patients(f)) ++test_count[index.pathology_of(p)];
    for (const auto& p : a.train_patients(f)) ++train_count[index.pathology_of(p)];
    EXPECT_EQ(a.train_patients(f).size(), 75u);
    for (int g = 0; g < 5; ++g) {
      EXPECT_EQ(test_count["G" + std::to_string(g)], 5);
      EXPECT_EQ(train_count["G" + std::to_string(g)], 15);
    }
  }
}

TEST(Stratified, BalanceWithinOnePropertyAndDeterminism) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::pair<std::string, std::string>> p;
    const std::size_t n = 4 + rng.below(60), groups = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) p.emplace_back("P" + std::to_string(i), "G" + std::to_string(rng.below(groups)));
    const auto index = tagged_index(p);
    const std::uint64_t seed = rng.next_u64();
    const auto a = stratified_kfold(index, 4, seed);
    expect_partition(a, index);
    EXPECT_EQ(a.fold_of, stratified_kfold(index, 4, seed).fold_of);
    std::map<std::string, std::vector<int>> per;
    for (const auto& [id, f] : a.fold_of) {
      auto& v = per[index.pathology_of(id)];
      v.resize(4);
      ++v[f];
    }
    for (const auto& [g, v] : per) EXPECT_LE(*std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()), 1);
    std::size_t lo = n, hi = 0;
    for (std::size_t f = 0; f < 4; ++f) {
      lo = std::min(lo, a.fold_size(f));
      hi = std::max(hi, a.fold_size(f));
    }
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(Stratified, SmallPathologyWarns) {
  const auto index = tagged_index({{"a", "X"}, {"b", "X"}, {"c", "Y"}, {"d", "Y"}, {"e", "Y"}, {"f", "Y"}});
  const auto a = stratified_kfold(index, 4, 0);
  EXPECT_FALSE(a.warnings.empty());
  expect_partition(a, index);
}

TEST(Random, TwoHundredThreePatients) {
  const auto index = untagged_cohort(203);
  const auto a = random_kfold(index, 4, 5);
  expect_partition(a, index);
  std::multiset<std::size_t> sizes, train_sizes;
  for (std::size_t f = 0; f < 4; ++f) {
    sizes.insert(a.fold_size(f));
    train_sizes.insert(a.train_patients(f).size());
  }
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{50, 51, 51, 51}));
  EXPECT_EQ(train_sizes, (std::multiset<std::size_t>{152, 152, 152, 153}));
}

TEST(Random, FourPatientsLeaveOneOut) {
  const auto index = untagged_cohort(4);
  const auto a = random_kfold(index, 4, 9);
  for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(a.test_patients(f).size(), 1u);
  EXPECT_EQ(a.fold_of, random_kfold(index, 4, 9).fold_of);
  EXPECT_NE(random_kfold(untagged_cohort(40), 4, 1).fold_of, random_kfold(untagged_cohort(40), 4, 2).fold_of);
}

TEST(AutoKfold, PicksStrategyFromTags) {
  const auto tagged = stratified_cohort(5, 8);
  EXPECT_EQ(auto_kfold(tagged, 4, 3).fold_of, stratified_kfold(tagged, 4, 3).fold_of);
  const auto plain = untagged_cohort(30);
  EXPECT_EQ(auto_kfold(plain, 4, 3).fold_of, random_kfold(plain, 4, 3).fold_of);
}

TEST(DatasetIndex, SubsetAndMerge) {
  const auto index = synth_generate(SynthSpec::distribution_a(), 4, 1);
  const auto ids = index.patient_ids();
  ASSERT_EQ(ids.size(), 4u);
  const auto sub = index.subset({ids[2], ids[0]});
  EXPECT_EQ(sub.patient_ids(), (std::vector<std::string>{ids[0], ids[2]}));
  const auto b = synth_generate(SynthSpec::distribution_b(), 2, 1);
  const auto m = sub.merged(b);
  EXPECT_EQ(m.size(), sub.size() + b.size());
  EXPECT_ANY_THROW(index.pathology_of("nobody"));
}

TEST(Synth, DeterministicAndValid) {
  const auto a = synth_generate(SynthSpec::distribution_a(), 8, 42);
  const auto b = synth_generate(SynthSpec::distribution_a(), 8, 42);
  ASSERT_EQ(a.size(), b.size());
  std::set<std::pair<std::size_t, std::size_t>> extents;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples()[i]->image, b.samples()[i]->image);
    EXPECT_EQ(a.samples()[i]->mask, b.samples()[i]->mask);
    EXPECT_NO_THROW(a.samples()[i]->validate());
    const auto& m = a.samples()[i]->mask;
    std::set<int> labels(m.voxels.begin(), m.voxels.end());
    EXPECT_EQ(labels, (std::set<int>{0, 1, 2, 3}));
    EXPECT_EQ(argmax_labels(one_hot(m)), m);
    extents.emplace(m.height, m.width);
  }
  EXPECT_EQ(a.patient_ids().size(), 8u);
  EXPECT_GT(extents.size(), 1u);
  const auto c = synth_generate(SynthSpec::distribution_a(), 8, 43);
  EXPECT_NE(a.samples()[0]->image, c.samples()[0]->image);
}

TEST(Synth, DistributionBHasLargerRightVentricle) {
  // Physical RV area (pixel count times in-plane pixel area) averaged per volume.
  auto mean_rv_area = [](const DatasetIndex& index) {
    double total = 0;
    for (const auto& s : index.samples()) {
      const auto n = std::count(s->mask.voxels.begin(), s->mask.voxels.end(), kRV);
      total += static_cast<double>(n) * s->spacing.y * s->spacing.x / static_cast<double>(s->mask.slices);
    }
    return total / static_cast<double>(index.size());
  };
  const auto a = synth_generate(SynthSpec::distribution_a(), 16, 11);
  const auto b = synth_generate(SynthSpec::distribution_b(), 16, 11);
  EXPECT_GT(mean_rv_area(b), 1.2 * mean_rv_area(a));
}

TEST(Synth, DegenerateSpecRejected) {
  auto spec = SynthSpec::distribution_a();
  spec.lv_radius_min = 20;
  spec.lv_radius_max = 10;
  EXPECT_ANY_THROW(synth_generate(spec, 2, 1));
  spec = SynthSpec::distribution_a();
  spec.phases.clear();
  EXPECT_ANY_THROW(synth_generate(spec, 2, 1));
}

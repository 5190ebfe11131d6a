#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cardiseg/dataset.hpp"

namespace cardiseg {

/// Voxel values plus header spacing of one 3D file.
template <typename T>
struct LoadedVolume {
  Volume3D<T> volume;
  Spacing spacing;
};

enum class VoxelType { kFloat32, kUInt8 };

/// Single-file NIfTI-1 (.nii, or gzip-compressed .nii.gz). Either byte
/// order; integer and floating datatypes; scl_slope/scl_inter applied.
LoadedVolume<float> read_nifti(const std::filesystem::path& path);
/// Label volume; every voxel must hold an integer value in [0, 255].
LoadedVolume<std::uint8_t> read_nifti_labels(const std::filesystem::path& path);

void write_nifti(const std::filesystem::path& path, const Volume3D<float>& volume, const Spacing& spacing);
void write_nifti(const std::filesystem::path& path, const Volume3D<std::uint8_t>& volume, const Spacing& spacing);

/// Raw format: `<stem>.json` {shape [S,H,W], spacing [z,y,x], dtype "f32"|"u8",
/// labels} next to a little-endian `<stem>.raw` value block. `path` names the
/// JSON sidecar.
LoadedVolume<float> read_raw(const std::filesystem::path& path);
LoadedVolume<std::uint8_t> read_raw_labels(const std::filesystem::path& path);
void write_raw(const std::filesystem::path& path, const Volume3D<float>& volume, const Spacing& spacing);
void write_raw(const std::filesystem::path& path, const Volume3D<std::uint8_t>& volume, const Spacing& spacing);

/// Image and mask pair; format chosen by extension (.nii, .nii.gz, .json).
/// Spacing comes from the image header. The returned sample has empty
/// identity fields.
VolumeSample load_volume(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

/// JSON list of {patient_id, pathology, phase, image_path, mask_path};
/// relative paths resolve against the manifest's directory.
DatasetIndex load_manifest(const std::filesystem::path& manifest_path, const std::string& provenance = {});

/// Writes every volume in raw format under `dir/<patient>/` plus
/// `dir/manifest.json`. Output bytes depend only on the index contents.
void write_dataset(const std::filesystem::path& dir, const DatasetIndex& index);

}  // namespace cardiseg

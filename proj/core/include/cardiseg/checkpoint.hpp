#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cardiseg/autodiff.hpp"

namespace cardiseg {

/// Checkpoint container layout:
///
///   offset 0   8 bytes   magic "CSEGCKPT"
///   offset 8   8 bytes   manifest length L, unsigned little-endian
///   offset 16  L bytes   JSON manifest
///   offset 16+L          value blocks, little-endian IEEE-754
///
/// The manifest is
///   {"format": "cardiseg-checkpoint", "version": 1, "precision": "f32"|"f64",
///    "tensors": [{"name", "shape", "offset", "count"}, ...], "metadata": {...}}
/// where `offset` counts bytes from the start of the value blocks.
inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
struct CheckpointContents {
  std::string metadata_json = "{}";
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

/// `metadata_json` must be a JSON object; it is stored under "metadata".
template <typename T>
void write_checkpoint(const std::filesystem::path& path, std::span<const Parameter<T>> params,
                      const std::string& metadata_json = "{}");

/// Reads a checkpoint of either precision, converting values to T.
template <typename T>
CheckpointContents<T> read_checkpoint(const std::filesystem::path& path);

}  // namespace cardiseg

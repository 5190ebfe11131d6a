#include "cardiseg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace cardiseg {
namespace {

using nlohmann::json;

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
void write_checkpoint(const std::filesystem::path& path, std::span<const Parameter<T>> params,
                      const std::string& metadata_json) {
  json manifest;
  manifest["format"] = "cardiseg-checkpoint";
  manifest["version"] = 1;
  manifest["precision"] = precision_name<T>();
  manifest["metadata"] = json::parse(metadata_json);
  if (!manifest["metadata"].is_object()) throw ConfigError("checkpoint metadata must be a JSON object");
  json tensors = json::array();
  std::string blocks;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", blocks.size()},
                       {"count", p.value.size()}});
    for (T v : p.value.data()) {
      if constexpr (sizeof(T) == 4) {
        put_le(blocks, std::bit_cast<std::uint32_t>(v));
      } else {
        put_le(blocks, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += blocks;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

template <typename T>
CheckpointContents<T> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw ParseError("not a cardiseg checkpoint: " + path.string());
  }
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto manifest_len = get_le<std::uint64_t>(base + 8);
  if (manifest_len > bytes.size() - 16) throw ParseError("checkpoint manifest truncated: " + path.string());
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, manifest_len));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::size_t data_start = 16 + manifest_len;
  const std::string precision = manifest.value("precision", "");
  std::size_t width;
  if (precision == "f32") {
    width = 4;
  } else if (precision == "f64") {
    width = 8;
  } else {
    throw ParseError("checkpoint precision must be f32 or f64, got '" + precision + "'");
  }

  CheckpointContents<T> out;
  out.metadata_json = manifest.value("metadata", json::object()).dump();
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (shape_volume(shape) != count) throw ParseError("checkpoint tensor count does not match its shape");
    if (data_start + offset + count * width > bytes.size()) throw ParseError("checkpoint value block truncated");
    std::vector<T> values(count);
    const unsigned char* p = base + data_start + offset;
    for (std::size_t i = 0; i < count; ++i, p += width) {
      if (width == 4) {
        values[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(p)));
      } else {
        values[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(p)));
      }
    }
    out.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor<T>(shape, std::move(values)));
  }
  return out;
}

template void write_checkpoint<float>(const std::filesystem::path&, std::span<const Parameter<float>>,
                                      const std::string&);
template void write_checkpoint<double>(const std::filesystem::path&, std::span<const Parameter<double>>,
                                       const std::string&);
template CheckpointContents<float> read_checkpoint<float>(const std::filesystem::path&);
template CheckpointContents<double> read_checkpoint<double>(const std::filesystem::path&);

}  // namespace cardiseg

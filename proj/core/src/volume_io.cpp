#include "cardiseg/volume_io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "json_util.hpp"

namespace cardiseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string gunzip(const std::string& bytes, const fs::path& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw ParseError("zlib init failed for " + path.string());
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buffer[1 << 15];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw ParseError("corrupt gzip stream in " + path.string());
    }
    out.append(buffer, sizeof(buffer) - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw ParseError("truncated gzip stream in " + path.string());
    }
  }
  inflateEnd(&zs);
  return out;
}

std::string gzip(const std::string& bytes) {
  z_stream zs{};
  // Fixed header fields (no mtime) keep output bytes reproducible.
  if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("zlib init failed");
  }
  std::string out(deflateBound(&zs, static_cast<uLong>(bytes.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename U>
  U get(std::size_t offset) const {
    if (offset + sizeof(U) > bytes_.size()) throw ParseError("NIfTI file truncated");
    unsigned char b[sizeof(U)];
    std::memcpy(b, bytes_.data() + offset, sizeof(U));
    if (swap_) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }

 private:
  const std::string& bytes_;
  bool swap_;
};

struct NiftiData {
  std::size_t nx = 0, ny = 0, nz = 0;
  Spacing spacing;
  std::vector<double> values;  // x fastest, then y, then z
};

NiftiData decode_nifti(const fs::path& path) {
  std::string bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f && static_cast<unsigned char>(bytes[1]) == 0x8b) {
    bytes = gunzip(bytes, path);
  }
  if (bytes.size() < kNiftiHeaderSize) throw ParseError(path.string() + ": file shorter than a NIfTI-1 header");

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != static_cast<std::int32_t>(kNiftiHeaderSize)) {
    swap = true;
    if (static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr))) != static_cast<std::int32_t>(kNiftiHeaderSize)) {
      throw ParseError(path.string() + ": sizeof_hdr is not 348");
    }
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    throw ParseError(path.string() + ": magic is not \"n+1\" (only single-file NIfTI-1 is supported)");
  }
  const ByteReader r(bytes, swap);

  const auto ndim = r.get<std::int16_t>(40);
  if (ndim < 2 || ndim > 7) throw ParseError(path.string() + ": dim[0] must lie in [2, 7]");
  std::size_t dims[8] = {0, 1, 1, 1, 1, 1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    const auto d = r.get<std::int16_t>(40 + 2 * static_cast<std::size_t>(i));
    if (d < 1) throw ParseError(path.string() + ": non-positive dimension");
    dims[i] = static_cast<std::size_t>(d);
  }
  for (int i = 4; i <= ndim; ++i) {
    if (dims[i] != 1) throw ParseError(path.string() + ": only 2D or 3D volumes are supported");
  }
  const auto datatype = r.get<std::int16_t>(70);
  const auto vox_offset = static_cast<std::size_t>(r.get<float>(108));
  float slope = r.get<float>(112);
  float inter = r.get<float>(116);
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  if (!std::isfinite(inter)) inter = 0.0f;

  NiftiData out;
  out.nx = dims[1];
  out.ny = dims[2];
  out.nz = dims[3];
  auto pix = [&](std::size_t i) {
    const double v = std::abs(static_cast<double>(r.get<float>(76 + 4 * i)));
    return v > 0.0 ? v : 1.0;
  };
  out.spacing = {ndim >= 3 ? pix(3) : 1.0, pix(2), pix(1)};

  const std::size_t count = out.nx * out.ny * out.nz;
  std::size_t width;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: case 768: width = 4; break;
    case 64: width = 8; break;
    default: throw ParseError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  if (vox_offset < kNiftiHeaderSize || vox_offset + count * width > bytes.size()) {
    throw ParseError(path.string() + ": voxel data truncated");
  }
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = vox_offset + i * width;
    double v;
    switch (datatype) {
      case 2: v = r.get<std::uint8_t>(at); break;
      case 256: v = r.get<std::int8_t>(at); break;
      case 4: v = r.get<std::int16_t>(at); break;
      case 512: v = r.get<std::uint16_t>(at); break;
      case 8: v = r.get<std::int32_t>(at); break;
      case 768: v = r.get<std::uint32_t>(at); break;
      case 16: v = r.get<float>(at); break;
      default: v = r.get<double>(at); break;
    }
    out.values[i] = v * slope + inter;
  }
  return out;
}

template <typename T>
std::string encode_nifti(const Volume3D<T>& volume, const Spacing& spacing) {
  std::string bytes(kNiftiDataOffset, '\0');
  auto put = [&](std::size_t offset, auto value) { std::memcpy(bytes.data() + offset, &value, sizeof(value)); };
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  put(0, static_cast<std::int32_t>(kNiftiHeaderSize));
  const std::int16_t dims[8] = {3,
                                static_cast<std::int16_t>(volume.width),
                                static_cast<std::int16_t>(volume.height),
                                static_cast<std::int16_t>(volume.slices),
                                1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) put(40 + 2 * i, dims[i]);
  constexpr bool is_float = std::is_same_v<T, float>;
  put(70, static_cast<std::int16_t>(is_float ? 16 : 2));
  put(72, static_cast<std::int16_t>(8 * sizeof(T)));
  const float pixdim[8] = {1.0f, static_cast<float>(spacing.x), static_cast<float>(spacing.y),
                           static_cast<float>(spacing.z), 1.0f, 1.0f, 1.0f, 1.0f};
  for (std::size_t i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
  put(108, static_cast<float>(kNiftiDataOffset));
  put(112, 1.0f);
  put(123, static_cast<char>(10));  // xyzt_units: mm, seconds
  std::memcpy(bytes.data() + 344, "n+1\0", 4);
  const auto* raw = reinterpret_cast<const char*>(volume.voxels.data());
  bytes.append(raw, volume.voxels.size() * sizeof(T));
  return bytes;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
void write_nifti_impl(const fs::path& path, const Volume3D<T>& volume, const Spacing& spacing) {
  if (volume.voxels.empty()) throw ShapeError("cannot write an empty volume");
  if (volume.width > 32767 || volume.height > 32767 || volume.slices > 32767) {
    throw ShapeError("volume extent exceeds the NIfTI-1 limit");
  }
  const std::string bytes = encode_nifti(volume, spacing);
  write_bytes(path, ends_with(path.string(), ".gz") ? gzip(bytes) : bytes);
}

struct RawHeader {
  std::vector<std::size_t> shape;
  std::vector<double> spacing;
  std::string dtype;
  std::vector<int> labels;
};

RawHeader read_raw_header(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  RawHeader h;
  try {
    detail::ObjectReader reader(doc, "");
    reader.read("shape", h.shape);
    reader.read("spacing", h.spacing);
    reader.read("dtype", h.dtype);
    reader.read("labels", h.labels);
    reader.finish();
  } catch (const ConfigError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (h.shape.size() != 3 || h.spacing.size() != 3) {
    throw ParseError(path.string() + ": shape and spacing need three entries");
  }
  for (auto d : h.shape) {
    if (d == 0) throw ParseError(path.string() + ": non-positive extent");
  }
  return h;
}

template <typename T>
LoadedVolume<T> read_raw_impl(const fs::path& path) {
  const RawHeader h = read_raw_header(path);
  if (h.dtype != "f32" && h.dtype != "u8") throw ParseError(path.string() + ": dtype must be f32 or u8");
  const std::string bytes = read_file_bytes(fs::path(path).replace_extension(".raw"));
  const std::size_t width = h.dtype == "f32" ? 4 : 1;
  LoadedVolume<T> out;
  out.volume = Volume3D<T>(h.shape[0], h.shape[1], h.shape[2]);
  if (bytes.size() != out.volume.voxels.size() * width) {
    throw ParseError(path.string() + ": value block length does not match shape");
  }
  for (std::size_t i = 0; i < out.volume.voxels.size(); ++i) {
    if (width == 4) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
      const float v = std::bit_cast<float>(bits);
      if constexpr (std::is_same_v<T, float>) {
        out.volume.voxels[i] = v;
      } else {
        if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
          throw ValidationError(path.string() + ": non-integer label value");
        }
        out.volume.voxels[i] = static_cast<T>(v);
      }
    } else {
      out.volume.voxels[i] = static_cast<T>(static_cast<unsigned char>(bytes[i]));
    }
  }
  out.spacing = {h.spacing[0], h.spacing[1], h.spacing[2]};
  return out;
}

template <typename T>
void write_raw_impl(const fs::path& path, const Volume3D<T>& volume, const Spacing& spacing) {
  if (volume.voxels.empty()) throw ShapeError("cannot write an empty volume");
  constexpr bool is_float = std::is_same_v<T, float>;
  json header;
  header["shape"] = {volume.slices, volume.height, volume.width};
  header["spacing"] = {spacing.z, spacing.y, spacing.x};
  header["dtype"] = is_float ? "f32" : "u8";
  header["labels"] = is_float ? json::array() : json::array({0, 1, 2, 3});
  write_bytes(path, header.dump(2) + "\n");
  std::string block;
  block.reserve(volume.voxels.size() * sizeof(T));
  for (T v : volume.voxels) {
    if constexpr (is_float) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (std::size_t b = 0; b < 4; ++b) block.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    } else {
      block.push_back(static_cast<char>(v));
    }
  }
  write_bytes(fs::path(path).replace_extension(".raw"), block);
}

bool is_raw_path(const fs::path& p) { return p.extension() == ".json"; }

}  // namespace

LoadedVolume<float> read_nifti(const fs::path& path) {
  NiftiData d = decode_nifti(path);
  LoadedVolume<float> out;
  out.volume = Volume3D<float>(d.nz, d.ny, d.nx);
  for (std::size_t i = 0; i < d.values.size(); ++i) out.volume.voxels[i] = static_cast<float>(d.values[i]);
  out.spacing = d.spacing;
  return out;
}

LoadedVolume<std::uint8_t> read_nifti_labels(const fs::path& path) {
  NiftiData d = decode_nifti(path);
  LoadedVolume<std::uint8_t> out;
  out.volume = Volume3D<std::uint8_t>(d.nz, d.ny, d.nx);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const double v = std::round(d.values[i]);
    if (std::abs(v - d.values[i]) > 1e-3 || v < 0.0 || v > 255.0) {
      throw ValidationError(path.string() + ": label volume holds non-integer value " + std::to_string(d.values[i]));
    }
    out.volume.voxels[i] = static_cast<std::uint8_t>(v);
  }
  out.spacing = d.spacing;
  return out;
}

void write_nifti(const fs::path& path, const Volume3D<float>& volume, const Spacing& spacing) {
  write_nifti_impl(path, volume, spacing);
}
void write_nifti(const fs::path& path, const Volume3D<std::uint8_t>& volume, const Spacing& spacing) {
  write_nifti_impl(path, volume, spacing);
}

LoadedVolume<float> read_raw(const fs::path& path) { return read_raw_impl<float>(path); }
LoadedVolume<std::uint8_t> read_raw_labels(const fs::path& path) { return read_raw_impl<std::uint8_t>(path); }
void write_raw(const fs::path& path, const Volume3D<float>& volume, const Spacing& spacing) {
  write_raw_impl(path, volume, spacing);
}
void write_raw(const fs::path& path, const Volume3D<std::uint8_t>& volume, const Spacing& spacing) {
  write_raw_impl(path, volume, spacing);
}

VolumeSample load_volume(const fs::path& image_path, const fs::path& mask_path) {
  auto image = is_raw_path(image_path) ? read_raw(image_path) : read_nifti(image_path);
  auto mask = is_raw_path(mask_path) ? read_raw_labels(mask_path) : read_nifti_labels(mask_path);
  VolumeSample sample;
  sample.image = std::move(image.volume);
  sample.mask = std::move(mask.volume);
  sample.spacing = image.spacing;
  sample.patient_id = image_path.stem().string();
  sample.validate();
  return sample;
}

DatasetIndex load_manifest(const fs::path& manifest_path, const std::string& provenance) {
  json doc;
  try {
    doc = json::parse(read_file_bytes(manifest_path));
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(manifest_path.string() + ": manifest must be a JSON list");
  const fs::path base = manifest_path.parent_path();
  std::vector<std::shared_ptr<const VolumeSample>> samples;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    std::string patient_id, pathology, phase, image_path, mask_path;
    detail::ObjectReader reader(doc[i], "/" + std::to_string(i));
    reader.read("patient_id", patient_id);
    reader.read("pathology", pathology);
    reader.read("phase", phase);
    reader.read("image_path", image_path);
    reader.read("mask_path", mask_path);
    reader.finish();
    if (patient_id.empty() || image_path.empty() || mask_path.empty()) {
      throw ConfigError("entry needs patient_id, image_path and mask_path", "/" + std::to_string(i));
    }
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    VolumeSample s = load_volume(resolve(image_path), resolve(mask_path));
    s.patient_id = patient_id;
    s.pathology = pathology;
    s.phase = parse_phase(phase.empty() ? "ED" : phase);
    samples.push_back(std::make_shared<const VolumeSample>(std::move(s)));
  }
  return DatasetIndex(provenance.empty() ? manifest_path.parent_path().filename().string() : provenance,
                      std::move(samples));
}

void write_dataset(const fs::path& dir, const DatasetIndex& index) {
  json manifest = json::array();
  for (const auto& s : index.samples()) {
    const std::string stem = s->patient_id + "/" + to_string(s->phase);
    write_raw(dir / (stem + "_image.json"), s->image, s->spacing);
    write_raw(dir / (stem + "_mask.json"), s->mask, s->spacing);
    json entry;
    entry["patient_id"] = s->patient_id;
    entry["pathology"] = s->pathology;
    entry["phase"] = to_string(s->phase);
    entry["image_path"] = stem + "_image.json";
    entry["mask_path"] = stem + "_mask.json";
    manifest.push_back(std::move(entry));
  }
  write_bytes(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace cardiseg

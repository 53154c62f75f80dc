#pragma once

// Preprocessed slice cache: one binary array file per patient plus a JSON
// sidecar.
//
// Binary layout (little-endian):
//   bytes 0..7    magic "MMGANSLC"
//   uint32        format version (1)
//   uint32 x 4    N, C, H, W
//   uint32        CRC-32 of the float payload
//   float32[N*C*H*W] row-major [N, C, H, W]
//
// The sidecar `<patient>.json` repeats shape and checksum and carries the
// provenance needed to reuse the cache: channel order, mean divisors,
// bounding box, resize target, foreground threshold, slice indices.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/error.hpp"
#include "mmgan/preprocess.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

inline constexpr int kCacheSchemaVersion = 1;
inline constexpr char kCacheMagic[8] = {'M', 'M', 'G', 'A', 'N', 'S', 'L', 'C'};

struct PreprocessParams {
  BoundingBox3D box;
  std::size_t height = 256;
  std::size_t width = 256;
  double threshold = 0.0;

  friend bool operator==(const PreprocessParams&, const PreprocessParams&) = default;
};

inline nlohmann::json to_json(const PreprocessParams& p) {
  return {{"bbox_min", p.box.min}, {"bbox_max", p.box.max}, {"size", {p.height, p.width}}, {"threshold", p.threshold}};
}

inline PreprocessParams preprocess_params_from_json(const nlohmann::json& j) {
  PreprocessParams p;
  p.box.min = j.at("bbox_min").get<std::array<std::size_t, 3>>();
  p.box.max = j.at("bbox_max").get<std::array<std::size_t, 3>>();
  const auto size = j.at("size").get<std::array<std::size_t, 2>>();
  p.height = size[0];
  p.width = size[1];
  p.threshold = j.at("threshold").get<double>();
  return p;
}

struct CacheMeta {
  std::string patient_id;
  std::vector<std::string> channel_order;
  std::vector<double> divisors;
  PreprocessParams preprocessing;
  std::array<std::size_t, 3> source_shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

struct CachedPatient {
  SliceStack slices;
  CacheMeta meta;
};

inline std::uint32_t payload_crc(const std::vector<float>& data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(data.data());
  std::size_t left = data.size() * sizeof(float);
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, bytes, chunk);
    bytes += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::filesystem::path cache_array_path(const std::filesystem::path& dir, const std::string& patient_id) {
  return dir / (patient_id + ".bin");
}

inline std::filesystem::path cache_sidecar_path(const std::filesystem::path& dir, const std::string& patient_id) {
  return dir / (patient_id + ".json");
}

namespace detail {

inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
void append_pod(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

inline void write_cache(const std::filesystem::path& dir, const SliceStack& slices, const CacheMeta& meta) {
  if (slices.data.size() != slices.count * slices.slice_stride()) {
    throw ShapeMismatch("slice stack payload does not match its shape");
  }
  std::filesystem::create_directories(dir);
  const std::uint32_t crc = payload_crc(slices.data);

  std::string buf;
  buf.reserve(28 + slices.data.size() * sizeof(float));
  buf.append(kCacheMagic, sizeof(kCacheMagic));
  detail::append_pod(buf, static_cast<std::uint32_t>(kCacheSchemaVersion));
  for (auto d : {slices.count, slices.channels, slices.height, slices.width}) {
    detail::append_pod(buf, static_cast<std::uint32_t>(d));
  }
  detail::append_pod(buf, crc);
  buf.append(reinterpret_cast<const char*>(slices.data.data()), slices.data.size() * sizeof(float));

  nlohmann::json side{
      {"schema_version", kCacheSchemaVersion},
      {"patient_id", meta.patient_id},
      {"channel_order", meta.channel_order},
      {"divisors", meta.divisors},
      {"preprocessing", to_json(meta.preprocessing)},
      {"source_shape", meta.source_shape},
      {"spacing", meta.spacing},
      {"shape", {slices.count, slices.channels, slices.height, slices.width}},
      {"slice_indices", slices.slice_indices},
      {"crc32", crc},
  };
  detail::write_atomically(cache_array_path(dir, meta.patient_id), buf);
  detail::write_atomically(cache_sidecar_path(dir, meta.patient_id), side.dump(2) + "\n");
}

// Reads and validates one patient's cache. `expected_channels` must match
// the sidecar's channel order exactly.
inline CachedPatient read_cache(const std::filesystem::path& dir, const std::string& patient_id,
                                const std::vector<std::string>& expected_channels) {
  const auto side_path = cache_sidecar_path(dir, patient_id);
  const auto bin_path = cache_array_path(dir, patient_id);
  if (!std::filesystem::exists(side_path) || !std::filesystem::exists(bin_path)) {
    throw IoError("no cache for patient '" + patient_id + "' in " + dir.string());
  }
  nlohmann::json side;
  try {
    std::ifstream in(side_path);
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCache(side_path.string() + ": " + e.what());
  }

  CachedPatient out;
  std::array<std::size_t, 4> shape{};
  std::uint32_t side_crc = 0;
  try {
    if (side.at("schema_version").get<int>() != kCacheSchemaVersion) {
      throw CorruptCache(side_path.string() + ": schema version " + side.at("schema_version").dump() +
                         " (expected " + std::to_string(kCacheSchemaVersion) + ")");
    }
    out.meta.patient_id = side.at("patient_id").get<std::string>();
    out.meta.channel_order = side.at("channel_order").get<std::vector<std::string>>();
    out.meta.divisors = side.at("divisors").get<std::vector<double>>();
    out.meta.preprocessing = preprocess_params_from_json(side.at("preprocessing"));
    out.meta.source_shape = side.at("source_shape").get<std::array<std::size_t, 3>>();
    out.meta.spacing = side.at("spacing").get<std::array<double, 3>>();
    shape = side.at("shape").get<std::array<std::size_t, 4>>();
    out.slices.slice_indices = side.at("slice_indices").get<std::vector<std::size_t>>();
    side_crc = side.at("crc32").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCache(side_path.string() + ": " + e.what());
  }
  if (out.meta.channel_order != expected_channels) {
    throw CorruptCache(side_path.string() + ": channel order " + nlohmann::json(out.meta.channel_order).dump() +
                       " differs from configured " + nlohmann::json(expected_channels).dump());
  }

  std::ifstream in(bin_path, std::ios::binary);
  char magic[8];
  std::uint32_t header[6];
  if (!in.read(magic, 8) || std::memcmp(magic, kCacheMagic, 8) != 0) {
    throw CorruptCache(bin_path.string() + ": bad magic");
  }
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) throw CorruptCache(bin_path.string() + ": truncated header");
  if (header[0] != static_cast<std::uint32_t>(kCacheSchemaVersion)) {
    throw CorruptCache(bin_path.string() + ": format version " + std::to_string(header[0]));
  }
  for (int i = 0; i < 4; ++i) {
    if (header[1 + i] != shape[static_cast<std::size_t>(i)]) {
      throw CorruptCache(bin_path.string() + ": shape disagrees with sidecar");
    }
  }
  auto& s = out.slices;
  s.count = shape[0];
  s.channels = shape[1];
  s.height = shape[2];
  s.width = shape[3];
  s.data.resize(s.count * s.slice_stride());
  const auto bytes = static_cast<std::streamsize>(s.data.size() * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(s.data.data()), bytes)) throw CorruptCache(bin_path.string() + ": truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCache(bin_path.string() + ": trailing bytes");
  const std::uint32_t crc = payload_crc(s.data);
  if (crc != header[5] || crc != side_crc) throw CorruptCache(bin_path.string() + ": checksum mismatch");
  if (s.slice_indices.size() != s.count) throw CorruptCache(side_path.string() + ": slice index count mismatch");
  s.patient_ids.assign(s.count, out.meta.patient_id);
  return out;
}

// Patient ids with a sidecar in `dir`, sorted.
inline std::vector<std::string> list_cached_patients(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("cache directory not found: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json" && e.path().filename() != "dataset.json") {
      ids.push_back(e.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace mmgan

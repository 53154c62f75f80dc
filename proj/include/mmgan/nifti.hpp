#pragma once

// Minimal single-file NIfTI-1 (.nii / .nii.gz) reader and float32 writer.
// Reading goes through zlib's gz* API, which also handles uncompressed files.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmgan/error.hpp"
#include "mmgan/volume.hpp"

namespace mmgan::nifti {

#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348);

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct Image {
  VolumeF volume;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (z, y, x)
};

namespace detail {

class GzFile {
 public:
  GzFile(const std::filesystem::path& path, const char* mode) : f_(gzopen(path.string().c_str(), mode)) {}
  ~GzFile() {
    if (f_) gzclose(f_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  explicit operator bool() const { return f_ != nullptr; }

  bool read(void* dst, std::size_t n) {
    auto* p = static_cast<char*>(dst);
    while (n > 0) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(f_, p, chunk);
      if (got <= 0) return false;
      p += got;
      n -= static_cast<std::size_t>(got);
    }
    return true;
  }

  bool write(const void* src, std::size_t n) {
    auto* p = static_cast<const char*>(src);
    while (n > 0) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int put = gzwrite(f_, p, chunk);
      if (put <= 0) return false;
      p += put;
      n -= static_cast<std::size_t>(put);
    }
    return true;
  }

  bool close() {
    const int rc = gzclose(f_);
    f_ = nullptr;
    return rc == Z_OK;
  }

 private:
  gzFile f_;
};

template <class T>
void convert(const std::vector<char>& raw, std::vector<float>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<float>(v);
  }
}

inline bool is_gz(const std::filesystem::path& p) { return p.extension() == ".gz"; }

}  // namespace detail

inline Image read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  detail::GzFile f(path, "rb");
  if (!f) throw IoError("cannot open " + path.string());
  Header h{};
  if (!f.read(&h, sizeof(h))) throw IoError("truncated NIfTI header in " + path.string());
  if (h.sizeof_hdr != 348) throw IoError(path.string() + ": not a little-endian NIfTI-1 file");
  if (std::memcmp(h.magic, "n+1", 4) != 0) throw IoError(path.string() + ": only single-file NIfTI-1 is supported");
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw IoError(path.string() + ": expected a 3D volume");
  for (int i = 4; i <= ndim; ++i) {
    if (h.dim[i] > 1) throw IoError(path.string() + ": expected a 3D volume, found extra dimensions");
  }
  const auto nx = static_cast<std::size_t>(h.dim[1]);
  const auto ny = static_cast<std::size_t>(h.dim[2]);
  const auto nz = static_cast<std::size_t>(h.dim[3]);
  if (h.dim[1] < 1 || h.dim[2] < 1 || h.dim[3] < 1) throw IoError(path.string() + ": nonpositive dimension");

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof(Header)) throw IoError(path.string() + ": bad vox_offset");
  std::vector<char> skip(offset - sizeof(Header));
  if (!skip.empty() && !f.read(skip.data(), skip.size())) throw IoError("truncated NIfTI extension in " + path.string());

  const std::size_t count = nx * ny * nz;
  const std::size_t bytes_per = static_cast<std::size_t>(h.bitpix) / 8;
  std::vector<char> raw(count * bytes_per);
  if (!f.read(raw.data(), raw.size())) throw IoError("truncated voxel data in " + path.string());

  Image img;
  img.volume.shape = {nz, ny, nx};
  switch (h.datatype) {
    case kUInt8: detail::convert<std::uint8_t>(raw, img.volume.data); break;
    case kInt8: detail::convert<std::int8_t>(raw, img.volume.data); break;
    case kInt16: detail::convert<std::int16_t>(raw, img.volume.data); break;
    case kUInt16: detail::convert<std::uint16_t>(raw, img.volume.data); break;
    case kInt32: detail::convert<std::int32_t>(raw, img.volume.data); break;
    case kUInt32: detail::convert<std::uint32_t>(raw, img.volume.data); break;
    case kFloat32: detail::convert<float>(raw, img.volume.data); break;
    case kFloat64: detail::convert<double>(raw, img.volume.data); break;
    default: throw IoError(path.string() + ": unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& v : img.volume.data) v = v * h.scl_slope + h.scl_inter;
  }
  auto dim_or_one = [](float v) { return v > 0.0f ? static_cast<double>(v) : 1.0; };
  img.spacing = {dim_or_one(h.pixdim[3]), dim_or_one(h.pixdim[2]), dim_or_one(h.pixdim[1])};
  return img;
}

// Writes float32 data; compressed when the name ends in .gz. Written to a
// temporary sibling and renamed into place.
inline void write(const std::filesystem::path& path, const VolumeF& v, const std::array<double, 3>& spacing) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.width());
  h.dim[2] = static_cast<std::int16_t>(v.height());
  h.dim[3] = static_cast<std::int16_t>(v.depth());
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = kFloat32;
  h.bitpix = 32;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[2]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[0]);
  for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  std::strncpy(h.descrip, "mmgan", sizeof(h.descrip) - 1);
  h.sform_code = 1;
  h.srow_x[0] = h.pixdim[1];
  h.srow_y[1] = h.pixdim[2];
  h.srow_z[2] = h.pixdim[3];
  std::memcpy(h.magic, "n+1", 4);
  const char extension[4] = {0, 0, 0, 0};

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  const std::size_t bytes = v.data.size() * sizeof(float);
  if (detail::is_gz(path)) {
    detail::GzFile f(tmp, "wb6");
    if (!f || !f.write(&h, sizeof(h)) || !f.write(extension, 4) || !f.write(v.data.data(), bytes) || !f.close()) {
      throw IoError("failed writing " + tmp.string());
    }
  } else {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(extension, 4);
    out.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(bytes));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mmgan::nifti

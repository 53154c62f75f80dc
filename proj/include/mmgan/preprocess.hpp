#pragma once

// Volume ingestion and preprocessing: per-sequence mean normalization,
// dataset-wide foreground bounding box, axial crop and bilinear resize.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mmgan/error.hpp"
#include "mmgan/nifti.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

inline constexpr double kMeanEpsilon = 1e-8;

// Inclusive voxel bounds, (z, y, x) order.
struct BoundingBox3D {
  std::array<std::size_t, 3> min{0, 0, 0};
  std::array<std::size_t, 3> max{0, 0, 0};

  std::size_t extent(int axis) const { return max[axis] - min[axis] + 1; }

  bool contains(const BoundingBox3D& o) const {
    for (int a = 0; a < 3; ++a) {
      if (o.min[a] < min[a] || o.max[a] > max[a]) return false;
    }
    return true;
  }

  bool fits(const std::array<std::size_t, 3>& shape) const {
    for (int a = 0; a < 3; ++a) {
      if (min[a] > max[a] || max[a] >= shape[a]) return false;
    }
    return true;
  }

  void merge(const BoundingBox3D& o) {
    for (int a = 0; a < 3; ++a) {
      min[a] = std::min(min[a], o.min[a]);
      max[a] = std::max(max[a], o.max[a]);
    }
  }

  friend bool operator==(const BoundingBox3D&, const BoundingBox3D&) = default;
};

// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
// exception thrown by any task is rethrown on the caller's thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex m;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (failure || next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Loading

// Sequence file for `name` inside a patient directory; prefers .nii.gz.
inline std::filesystem::path sequence_path(const std::filesystem::path& patient_dir, const std::string& name) {
  auto gz = patient_dir / (name + ".nii.gz");
  auto plain = patient_dir / (name + ".nii");
  if (!std::filesystem::exists(gz) && std::filesystem::exists(plain)) return plain;
  return gz;
}

// Sorted patient subdirectories of a dataset root.
inline std::vector<std::filesystem::path> list_patients(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline VolumeSet load_volume_set(std::string patient_id, std::span<const std::filesystem::path> paths) {
  for (const auto& p : paths) {
    if (!std::filesystem::exists(p)) throw IoError("missing sequence file " + p.string());
  }
  VolumeSet vs;
  vs.patient_id = std::move(patient_id);
  for (std::size_t k = 0; k < paths.size(); ++k) {
    auto img = nifti::read(paths[k]);
    if (k == 0) vs.spacing = img.spacing;
    vs.sequences.push_back(std::move(img.volume));
    vs.source_paths.push_back(paths[k]);
  }
  vs.check_consistent();
  return vs;
}

inline VolumeSet load_patient(const std::filesystem::path& patient_dir, const std::vector<std::string>& channels) {
  std::vector<std::filesystem::path> paths;
  for (const auto& c : channels) paths.push_back(sequence_path(patient_dir, c));
  return load_volume_set(patient_dir.filename().string(), paths);
}

// ---------------------------------------------------------------------------
// Normalization

// Divides v by its whole-volume mean (background included) and returns the
// divisor.
inline double normalize_by_mean(VolumeF& v, const std::string& what = "volume") {
  double sum = 0.0;
  for (float x : v.data) sum += x;
  const double mean = v.data.empty() ? 0.0 : sum / static_cast<double>(v.data.size());
  if (!(std::abs(mean) > kMeanEpsilon)) {
    throw DegenerateVolume(what + " has mean " + std::to_string(mean) + "; cannot mean-normalize");
  }
  for (auto& x : v.data) x = static_cast<float>(x / mean);
  return mean;
}

inline VolumeSet mean_normalize(VolumeSet v) {
  v.per_sequence_mean.clear();
  for (std::size_t k = 0; k < v.sequences.size(); ++k) {
    v.per_sequence_mean.push_back(
        normalize_by_mean(v.sequences[k], "patient '" + v.patient_id + "' sequence " + std::to_string(k)));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Bounding box

// Box of voxels exceeding `threshold` in any sequence.
inline std::optional<BoundingBox3D> foreground_bbox(const VolumeSet& v, double threshold) {
  v.check_consistent();
  const auto [d, h, w] = v.shape();
  std::optional<BoundingBox3D> box;
  for (const auto& seq : v.sequences) {
    for (std::size_t z = 0; z < d; ++z) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          if (!(seq.at(z, y, x) > threshold)) continue;
          const BoundingBox3D p{{z, y, x}, {z, y, x}};
          if (box) {
            box->merge(p);
          } else {
            box = p;
          }
        }
      }
    }
  }
  return box;
}

// Union of per-patient foreground boxes.
inline BoundingBox3D compute_dataset_bbox(std::span<const VolumeSet> volumes, double threshold = 0.0) {
  if (volumes.empty()) throw EmptyForeground("no volumes given");
  std::optional<BoundingBox3D> box;
  for (const auto& v : volumes) {
    auto b = foreground_bbox(v, threshold);
    if (!b) continue;
    if (box) {
      box->merge(*b);
    } else {
      box = b;
    }
  }
  if (!box) throw EmptyForeground("no voxel exceeds threshold " + std::to_string(threshold) + " in any volume");
  return *box;
}

// ---------------------------------------------------------------------------
// Resampling

// Bilinear resize with half-pixel-centred sampling: output pixel i samples
// source coordinate (i + 0.5) * in/out - 0.5, clamped below at 0, with the
// upper neighbour clamped to the last row/column (same convention as
// align_corners=false in common deep-learning frameworks).
inline void resize_bilinear(std::span<const float> src, std::size_t in_h, std::size_t in_w, std::span<float> dst,
                            std::size_t out_h, std::size_t out_w) {
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  auto coord = [](std::size_t i, double scale, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
    double c = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (c < 0.0) c = 0.0;
    i0 = std::min(static_cast<std::size_t>(c), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    t = c - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, sy, in_h, y0, y1, ty);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, sx, in_w, x0, x1, tx);
      const double top = (1.0 - tx) * src[y0 * in_w + x0] + tx * src[y0 * in_w + x1];
      const double bottom = (1.0 - tx) * src[y1 * in_w + x0] + tx * src[y1 * in_w + x1];
      dst[y * out_w + x] = static_cast<float>((1.0 - ty) * top + ty * bottom);
    }
  }
}

// Axial slices of every sequence cropped to `box` and resized to
// out_h x out_w. One output slice per axial index in the box.
inline SliceStack crop_and_resize(const VolumeSet& v, const BoundingBox3D& box, std::size_t out_h, std::size_t out_w) {
  v.check_consistent();
  if (!box.fits(v.shape())) {
    throw BoxOutOfBounds("box exceeds volume " + shape_string(v.shape()) + " of patient '" + v.patient_id + "'");
  }
  if (out_h == 0 || out_w == 0) throw ShapeMismatch("resize target must be positive");
  SliceStack s;
  s.count = box.extent(0);
  s.channels = v.channels();
  s.height = out_h;
  s.width = out_w;
  s.data.assign(s.count * s.slice_stride(), 0.0f);
  const std::size_t ch = box.extent(1);
  const std::size_t cw = box.extent(2);
  std::vector<float> crop(ch * cw);
  for (std::size_t n = 0; n < s.count; ++n) {
    const std::size_t z = box.min[0] + n;
    for (std::size_t c = 0; c < s.channels; ++c) {
      const auto& seq = v.sequences[c];
      for (std::size_t y = 0; y < ch; ++y) {
        for (std::size_t x = 0; x < cw; ++x) crop[y * cw + x] = seq.at(z, box.min[1] + y, box.min[2] + x);
      }
      resize_bilinear(crop, ch, cw, s.plane(n, c), out_h, out_w);
    }
    s.patient_ids.push_back(v.patient_id);
    s.slice_indices.push_back(z);
  }
  return s;
}

// Inverse geometry of crop_and_resize for one channel: resizes each network
// slice back to the box's in-plane extent and places it in a zero volume of
// the original shape.
inline VolumeF uncrop(const VolumeF& network_slices, const BoundingBox3D& box, const std::array<std::size_t, 3>& shape) {
  if (!box.fits(shape)) throw BoxOutOfBounds("box exceeds target volume " + shape_string(shape));
  if (network_slices.depth() != box.extent(0)) {
    throw ShapeMismatch("expected " + std::to_string(box.extent(0)) + " slices, got " +
                        std::to_string(network_slices.depth()));
  }
  VolumeF out(shape[0], shape[1], shape[2]);
  const std::size_t ch = box.extent(1);
  const std::size_t cw = box.extent(2);
  std::vector<float> crop(ch * cw);
  for (std::size_t n = 0; n < network_slices.depth(); ++n) {
    resize_bilinear(network_slices.slice(n), network_slices.height(), network_slices.width(), crop, ch, cw);
    for (std::size_t y = 0; y < ch; ++y) {
      for (std::size_t x = 0; x < cw; ++x) out.at(box.min[0] + n, box.min[1] + y, box.min[2] + x) = crop[y * cw + x];
    }
  }
  return out;
}

}  // namespace mmgan

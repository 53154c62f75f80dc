#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmgan/error.hpp"

namespace mmgan {

// Dense 3D array stored depth-major: index (z, y, x) -> (z * H + y) * W + x.
// z is the axial slice index.
template <class T>
struct Volume {
  std::array<std::size_t, 3> shape{0, 0, 0};  // (D, H, W)
  std::vector<T> data;

  Volume() = default;
  Volume(std::size_t d, std::size_t h, std::size_t w, T fill = T{})
      : shape{d, h, w}, data(d * h * w, fill) {}

  std::size_t depth() const { return shape[0]; }
  std::size_t height() const { return shape[1]; }
  std::size_t width() const { return shape[2]; }
  std::size_t size() const { return data.size(); }
  std::size_t slice_size() const { return shape[1] * shape[2]; }

  T& at(std::size_t z, std::size_t y, std::size_t x) { return data[(z * shape[1] + y) * shape[2] + x]; }
  const T& at(std::size_t z, std::size_t y, std::size_t x) const {
    return data[(z * shape[1] + y) * shape[2] + x];
  }

  std::span<T> slice(std::size_t z) { return {data.data() + z * slice_size(), slice_size()}; }
  std::span<const T> slice(std::size_t z) const { return {data.data() + z * slice_size(), slice_size()}; }
};

using VolumeF = Volume<float>;

inline std::string shape_string(const std::array<std::size_t, 3>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + ")";
}

// One patient's co-registered sequences in channel order.
struct VolumeSet {
  std::string patient_id;
  std::vector<VolumeF> sequences;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm, (z, y, x)
  std::vector<double> per_sequence_mean;          // divisors once normalized, empty before
  std::vector<std::filesystem::path> source_paths;

  std::size_t channels() const { return sequences.size(); }
  const std::array<std::size_t, 3>& shape() const { return sequences.at(0).shape; }
  bool normalized() const { return per_sequence_mean.size() == sequences.size(); }

  void check_consistent() const {
    if (sequences.empty()) throw ShapeMismatch("volume set '" + patient_id + "' has no sequences");
    for (std::size_t k = 1; k < sequences.size(); ++k) {
      if (sequences[k].shape != sequences[0].shape) {
        throw ShapeMismatch("patient '" + patient_id + "' sequence " + std::to_string(k) + " has shape " +
                            shape_string(sequences[k].shape) + ", sequence 0 has " +
                            shape_string(sequences[0].shape));
      }
    }
  }
};

// N slices of C channels each, [N, C, H, W] row-major, with provenance.
struct SliceStack {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;
  std::vector<std::string> patient_ids;   // per slice
  std::vector<std::size_t> slice_indices;  // axial index in the source volume

  std::size_t plane_size() const { return height * width; }
  std::size_t slice_stride() const { return channels * plane_size(); }

  std::span<float> plane(std::size_t n, std::size_t c) {
    return {data.data() + n * slice_stride() + c * plane_size(), plane_size()};
  }
  std::span<const float> plane(std::size_t n, std::size_t c) const {
    return {data.data() + n * slice_stride() + c * plane_size(), plane_size()};
  }

  void append(const SliceStack& other) {
    if (count == 0 && data.empty()) {
      *this = other;
      return;
    }
    if (other.channels != channels || other.height != height || other.width != width) {
      throw ShapeMismatch("cannot append slice stacks of different geometry");
    }
    data.insert(data.end(), other.data.begin(), other.data.end());
    patient_ids.insert(patient_ids.end(), other.patient_ids.begin(), other.patient_ids.end());
    slice_indices.insert(slice_indices.end(), other.slice_indices.begin(), other.slice_indices.end());
    count += other.count;
  }

  // Channel c of every slice, restacked as a [N, H, W] volume.
  VolumeF channel_volume(std::size_t c) const {
    VolumeF v(count, height, width);
    for (std::size_t n = 0; n < count; ++n) {
      auto src = plane(n, c);
      std::copy(src.begin(), src.end(), v.slice(n).begin());
    }
    return v;
  }
};

}  // namespace mmgan

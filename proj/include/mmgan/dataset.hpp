#pragma once

// Whole-dataset preparation: load or accept raw volume sets, normalize,
// compute the shared bounding box, and produce per-patient slice stacks.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmgan/cache.hpp"
#include "mmgan/preprocess.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

struct PreparedDataset {
  std::vector<std::string> channels;
  PreprocessParams params;
  std::vector<CachedPatient> patients;  // sorted by patient id

  // All slices of the selected patients, concatenated in the given order.
  SliceStack gather(const std::vector<std::size_t>& which) const {
    SliceStack out;
    for (auto i : which) out.append(patients.at(i).slices);
    return out;
  }
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Last n_test patients are held out for testing, the n_validation before them
// for validation, the rest train.
inline DatasetSplit split_dataset(std::size_t n_patients, std::size_t n_test, std::size_t n_validation) {
  if (n_test + n_validation >= n_patients) {
    throw ConfigError("split leaves no training patients (" + std::to_string(n_patients) + " patients, " +
                      std::to_string(n_test) + " test, " + std::to_string(n_validation) + " validation)");
  }
  DatasetSplit s;
  const std::size_t n_train = n_patients - n_test - n_validation;
  for (std::size_t i = 0; i < n_patients; ++i) {
    if (i < n_train) {
      s.train.push_back(i);
    } else if (i < n_train + n_validation) {
      s.validation.push_back(i);
    } else {
      s.test.push_back(i);
    }
  }
  return s;
}

// Normalizes each volume set, computes the dataset box (unless `fixed_box` is
// given) and crops/resizes every patient. Patients are processed
// independently on up to `workers` threads.
inline PreparedDataset prepare_volume_sets(std::vector<VolumeSet> raw, std::vector<std::string> channels,
                                           std::size_t size, double threshold, std::size_t workers = 1,
                                           std::optional<BoundingBox3D> fixed_box = std::nullopt) {
  for (const auto& v : raw) {
    if (v.channels() != channels.size()) {
      throw ShapeMismatch("patient '" + v.patient_id + "' has " + std::to_string(v.channels()) +
                          " sequences, expected " + std::to_string(channels.size()));
    }
  }
  std::sort(raw.begin(), raw.end(), [](const VolumeSet& a, const VolumeSet& b) { return a.patient_id < b.patient_id; });
  parallel_for(raw.size(), workers, [&](std::size_t i) { raw[i] = mean_normalize(std::move(raw[i])); });

  PreparedDataset out;
  out.channels = std::move(channels);
  out.params.box = fixed_box ? *fixed_box : compute_dataset_bbox(raw, threshold);
  out.params.height = size;
  out.params.width = size;
  out.params.threshold = threshold;
  out.patients.resize(raw.size());
  parallel_for(raw.size(), workers, [&](std::size_t i) {
    auto& p = out.patients[i];
    p.slices = crop_and_resize(raw[i], out.params.box, size, size);
    p.meta.patient_id = raw[i].patient_id;
    p.meta.channel_order = out.channels;
    p.meta.divisors = raw[i].per_sequence_mean;
    p.meta.preprocessing = out.params;
    p.meta.source_shape = raw[i].shape();
    p.meta.spacing = raw[i].spacing;
  });
  return out;
}

inline std::vector<VolumeSet> load_raw_dataset(const std::filesystem::path& root, const std::vector<std::string>& channels,
                                               std::size_t workers = 1) {
  const auto dirs = list_patients(root);
  if (dirs.empty()) throw IoError("no patient directories under " + root.string());
  std::vector<VolumeSet> raw(dirs.size());
  parallel_for(dirs.size(), workers, [&](std::size_t i) { raw[i] = load_patient(dirs[i], channels); });
  return raw;
}

inline void write_prepared(const std::filesystem::path& dir, const PreparedDataset& d) {
  for (const auto& p : d.patients) write_cache(dir, p.slices, p.meta);
}

// Reads every cached patient in `dir`; all must share one preprocessing.
inline PreparedDataset read_prepared(const std::filesystem::path& dir, const std::vector<std::string>& channels) {
  PreparedDataset out;
  out.channels = channels;
  const auto ids = list_cached_patients(dir);
  if (ids.empty()) throw IoError("no cached patients in " + dir.string());
  for (const auto& id : ids) {
    out.patients.push_back(read_cache(dir, id, channels));
    if (out.patients.size() == 1) {
      out.params = out.patients.front().meta.preprocessing;
    } else if (!(out.patients.back().meta.preprocessing == out.params)) {
      throw CorruptCache("patient '" + id + "' was preprocessed with different parameters");
    }
  }
  return out;
}

}  // namespace mmgan

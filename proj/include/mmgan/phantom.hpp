#pragma once

// Synthetic multi-contrast head phantoms with a known tissue map, so that the
// true cross-contrast mapping is available for checking synthesis quality.
//
// Anatomy per patient: an in-plane rotated brain ellipsoid (grey matter
// shell) around a white-matter ellipsoid, two deep grey-matter nuclei, and
// zero to two spherical lesions inside the white matter. Each contrast is a
// per-tissue lookup in `contrast_table`; Gaussian noise is added to brain
// voxels only, so the background stays exactly zero as in skull-stripped
// scans.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/error.hpp"
#include "mmgan/nifti.hpp"
#include "mmgan/preprocess.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

enum Tissue : std::uint8_t { kBackground = 0, kWhiteMatter = 1, kGreyMatter = 2, kLesion = 3 };

// Rows: background, white matter, grey matter, lesion. Columns follow the
// default channel order (T1, T2, T1c, T2flair). T1/T1c and T2/T2flair are
// near-redundant pairs; the lesion matches white matter in T1 and T2 and is
// only visible in T1c and T2flair.
inline std::vector<std::vector<double>> default_contrast_table() {
  return {
      {0.00, 0.00, 0.00, 0.00},
      {1.00, 0.45, 1.05, 0.55},
      {0.65, 0.85, 0.70, 0.85},
      {1.00, 0.45, 1.70, 1.30},
  };
}

struct PhantomSpec {
  int n_patients = 10;
  int image_size = 64;
  int depth = 16;
  int n_tissue_classes = 4;
  std::vector<std::vector<double>> contrast_table = default_contrast_table();
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  int channels() const { return contrast_table.empty() ? 0 : static_cast<int>(contrast_table.front().size()); }

  void validate() const {
    if (n_patients < 1) throw ConfigError("phantom needs at least one patient");
    if (image_size < 8) throw ConfigError("phantom image_size must be >= 8");
    if (depth < 8) throw ConfigError("phantom depth must be >= 8 slices");
    if (n_tissue_classes != 4) throw ConfigError("phantom anatomy defines exactly 4 tissue classes");
    if (static_cast<int>(contrast_table.size()) != n_tissue_classes) {
      throw ConfigError("contrast_table needs one row per tissue class");
    }
    for (const auto& row : contrast_table) {
      if (static_cast<int>(row.size()) != channels() || row.empty()) {
        throw ConfigError("contrast_table rows must all have one entry per channel");
      }
    }
    for (std::size_t a = 0; a < contrast_table.size(); ++a) {
      for (std::size_t b = a + 1; b < contrast_table.size(); ++b) {
        if (contrast_table[a] == contrast_table[b]) {
          throw ConfigError("tissues " + std::to_string(a) + " and " + std::to_string(b) +
                            " are identical in every contrast");
        }
      }
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  }
};

struct PhantomDataset {
  PhantomSpec spec;
  std::vector<VolumeSet> patients;
  std::vector<Volume<std::uint8_t>> tissue_maps;
};

inline std::string phantom_patient_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_%03d", i);
  return buf;
}

namespace detail {

struct Ellipsoid {
  double cz, cy, cx;
  double rz, ry, rx;
  double angle;

  bool contains(double z, double y, double x) const {
    const double dz = z - cz;
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (dz * dz) / (rz * rz) + (v * v) / (ry * ry) + (u * u) / (rx * rx) <= 1.0;
  }

  Ellipsoid scaled(double f) const { return {cz, cy, cx, rz * f, ry * f, rx * f, angle}; }
};

inline Volume<std::uint8_t> render_tissue_map(const PhantomSpec& spec, std::mt19937_64& rng) {
  const auto d = static_cast<std::size_t>(spec.depth);
  const auto n = static_cast<std::size_t>(spec.image_size);
  const double S = spec.image_size;
  const double D = spec.depth;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const Ellipsoid brain{D / 2.0 + between(-0.5, 0.5), S / 2.0 + between(-0.03, 0.03) * S,
                        S / 2.0 + between(-0.03, 0.03) * S, D * between(0.50, 0.56),
                        S * between(0.36, 0.42), S * between(0.28, 0.34), between(-0.25, 0.25)};
  const Ellipsoid wm = brain.scaled(between(0.70, 0.80));
  const double c = std::cos(brain.angle);
  const double s = std::sin(brain.angle);
  // Deep nuclei sit symmetrically about the mid-line, offset along the
  // rotated minor axis.
  std::vector<Ellipsoid> nuclei;
  for (double side : {-1.0, 1.0}) {
    const double off = side * 0.11 * S;
    nuclei.push_back({brain.cz, brain.cy + s * off + 0.04 * S * c, brain.cx + c * off - 0.04 * S * s,
                      wm.rz * 0.45, 0.075 * S, 0.05 * S, brain.angle});
  }
  std::vector<Ellipsoid> lesions;
  const int n_lesions = std::uniform_int_distribution<int>(0, 2)(rng);
  for (int l = 0; l < n_lesions; ++l) {
    const Ellipsoid inner = wm.scaled(0.6);
    double z, y, x;
    do {
      z = between(inner.cz - inner.rz, inner.cz + inner.rz);
      y = between(inner.cy - inner.ry, inner.cy + inner.ry);
      x = between(inner.cx - inner.rx, inner.cx + inner.rx);
    } while (!inner.contains(z, y, x));
    const double r = S * between(0.08, 0.13);
    lesions.push_back({z, y, x, wm.rz * between(0.25, 0.45), r, r, 0.0});
  }

  Volume<std::uint8_t> map(d, n, n, kBackground);
  for (std::size_t iz = 0; iz < d; ++iz) {
    for (std::size_t iy = 0; iy < n; ++iy) {
      for (std::size_t ix = 0; ix < n; ++ix) {
        const double z = static_cast<double>(iz) + 0.5;
        const double y = static_cast<double>(iy) + 0.5;
        const double x = static_cast<double>(ix) + 0.5;
        if (!brain.contains(z, y, x)) continue;
        std::uint8_t t = kGreyMatter;
        if (wm.contains(z, y, x)) t = kWhiteMatter;
        for (const auto& e : nuclei) {
          if (e.contains(z, y, x)) t = kGreyMatter;
        }
        for (const auto& e : lesions) {
          if (e.contains(z, y, x)) t = kLesion;
        }
        map.at(iz, iy, ix) = t;
      }
    }
  }
  return map;
}

}  // namespace detail

// Noise-free rendering of one contrast from a tissue map.
inline VolumeF render_contrast(const Volume<std::uint8_t>& tissue, const std::vector<std::vector<double>>& table,
                               std::size_t channel) {
  VolumeF v(tissue.depth(), tissue.height(), tissue.width());
  for (std::size_t i = 0; i < tissue.size(); ++i) v.data[i] = static_cast<float>(table[tissue.data[i]][channel]);
  return v;
}

// Patient i depends only on (spec.seed, i), so any subset or ordering of
// patients can be generated in parallel with identical results.
inline PhantomDataset generate_phantom_dataset(const PhantomSpec& spec, std::size_t workers = 1) {
  spec.validate();
  PhantomDataset out;
  out.spec = spec;
  const auto n = static_cast<std::size_t>(spec.n_patients);
  out.patients.resize(n);
  out.tissue_maps.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xffffffffu), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    auto map = detail::render_tissue_map(spec, rng);
    VolumeSet vs;
    vs.patient_id = phantom_patient_id(static_cast<int>(i));
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    for (int c = 0; c < spec.channels(); ++c) {
      auto v = render_contrast(map, spec.contrast_table, static_cast<std::size_t>(c));
      if (spec.noise_sigma > 0.0) {
        for (std::size_t j = 0; j < v.size(); ++j) {
          if (map.data[j] != kBackground) v.data[j] = static_cast<float>(v.data[j] + noise(rng));
        }
      }
      vs.sequences.push_back(std::move(v));
    }
    out.patients[i] = std::move(vs);
    out.tissue_maps[i] = std::move(map);
  });
  return out;
}

inline nlohmann::json to_json(const PhantomSpec& s) {
  return {{"n_patients", s.n_patients}, {"image_size", s.image_size},   {"depth", s.depth},
          {"n_tissue_classes", s.n_tissue_classes}, {"contrast_table", s.contrast_table},
          {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

// Writes <dir>/<patient>/<channel>.nii.gz, <dir>/<patient>/tissue.nii.gz and
// a dataset.json manifest.
inline void write_phantom_dataset(const std::filesystem::path& dir, const PhantomDataset& d,
                                  const std::vector<std::string>& channels) {
  if (static_cast<int>(channels.size()) != d.spec.channels()) {
    throw ConfigError("channel name count does not match the contrast table");
  }
  std::filesystem::create_directories(dir);
  nlohmann::json ids = nlohmann::json::array();
  for (std::size_t i = 0; i < d.patients.size(); ++i) {
    const auto& p = d.patients[i];
    const auto pdir = dir / p.patient_id;
    for (std::size_t c = 0; c < channels.size(); ++c) {
      nifti::write(pdir / (channels[c] + ".nii.gz"), p.sequences[c], p.spacing);
    }
    VolumeF labels(d.tissue_maps[i].depth(), d.tissue_maps[i].height(), d.tissue_maps[i].width());
    for (std::size_t j = 0; j < labels.size(); ++j) labels.data[j] = d.tissue_maps[i].data[j];
    nifti::write(pdir / "tissue.nii.gz", labels, p.spacing);
    ids.push_back(p.patient_id);
  }
  const nlohmann::json manifest{{"generator", "phantom"}, {"channels", channels}, {"patients", ids},
                                {"spec", to_json(d.spec)}};
  std::ofstream(dir / "dataset.json") << manifest.dump(2) << "\n";
}

}  // namespace mmgan

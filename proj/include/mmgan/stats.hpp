#pragma once

// Rank tests. Small samples use the exact permutation distribution of the
// rank statistic, computed with midranks for ties (ranks are doubled so every
// sum is an integer); larger samples use the normal approximation with tie
// and continuity corrections. Both tests are two-sided.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmgan/error.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

inline constexpr std::size_t kWilcoxonExactMax = 50;     // nonzero differences
inline constexpr std::size_t kMannWhitneyExactMax = 50;  // n1 + n2
inline constexpr std::size_t kWilcoxonMinPairs = 5;

enum class StatTest { WilcoxonSignedRank, MannWhitneyU };

inline std::string to_string(StatTest t) {
  return t == StatTest::WilcoxonSignedRank ? "wilcoxon_signed_rank" : "mann_whitney_u";
}

struct StatTestResult {
  StatTest test = StatTest::MannWhitneyU;
  double statistic = 0.0;  // W+ for Wilcoxon, U of the first sample for Mann-Whitney
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  bool exact = false;
};

// Doubled midranks (1-based), so tied groups get integer values.
inline std::vector<long> doubled_midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<long> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);  // 2 * (mean of ranks i+1 .. j+1)
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r2;
    i = j + 1;
  }
  return ranks;
}

// Sum of t^3 - t over groups of tied values.
inline double tie_term(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    s += t * t * t - t;
    i = j + 1;
  }
  return s;
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Two-sided p from a discrete distribution given as counts per value.
inline double two_sided_from_counts(const std::vector<double>& counts, std::size_t observed) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double lower = 0.0, upper = 0.0;
  for (std::size_t s = 0; s <= observed; ++s) lower += counts[s];
  for (std::size_t s = observed; s < counts.size(); ++s) upper += counts[s];
  return std::clamp(2.0 * std::min(lower, upper) / total, 0.0, 1.0);
}

inline double two_sided_normal(double stat, double mean, double var) {
  const double dev = std::abs(stat - mean);
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  return std::clamp(2.0 * (1.0 - standard_normal_cdf(z)), 0.0, 1.0);
}

// Paired test on a - b. Zero differences are dropped before ranking.
inline StatTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeMismatch("wilcoxon: paired samples differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.size() < kWilcoxonMinPairs) {
    throw DegenerateSample("wilcoxon needs at least " + std::to_string(kWilcoxonMinPairs) + " pairs, got " +
                           std::to_string(a.size()));
  }
  std::vector<double> diff, mag;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d)) throw DegenerateSample("wilcoxon: non-finite difference");
    if (d != 0.0) {
      diff.push_back(d);
      mag.push_back(std::abs(d));
    }
  }
  if (diff.empty()) throw DegenerateSample("wilcoxon: all paired differences are zero");

  const auto r2 = doubled_midranks(mag);
  long w2 = 0;  // doubled W+
  for (std::size_t i = 0; i < diff.size(); ++i) {
    if (diff[i] > 0) w2 += r2[i];
  }
  StatTestResult res;
  res.test = StatTest::WilcoxonSignedRank;
  res.statistic = static_cast<double>(w2) / 2.0;
  res.n1 = res.n2 = a.size();
  const std::size_t n = diff.size();
  if (n <= kWilcoxonExactMax) {
    // counts[s]: sign assignments whose doubled positive-rank sum is s
    const long max_sum = std::accumulate(r2.begin(), r2.end(), 0L);
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : r2) {
      for (long s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      reach += r;
    }
    res.p_value = two_sided_from_counts(counts, static_cast<std::size_t>(w2));
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(mag) / 48.0;
    if (!(var > 0.0)) throw DegenerateSample("wilcoxon: zero variance");
    res.p_value = two_sided_normal(res.statistic, mean, var);
  }
  return res;
}

// Independent-samples test. The statistic is U of sample a.
inline StatTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DegenerateSample("mann-whitney: both samples must be nonempty");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw DegenerateSample("mann-whitney: non-finite value");
  }
  if (std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled[0]; })) {
    throw DegenerateSample("mann-whitney: all values identical");
  }
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  const auto r2 = doubled_midranks(pooled);
  long sum2 = 0;  // doubled rank sum of a
  for (std::size_t i = 0; i < n1; ++i) sum2 += r2[i];

  StatTestResult res;
  res.test = StatTest::MannWhitneyU;
  res.n1 = n1;
  res.n2 = n2;
  const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2);
  res.statistic = static_cast<double>(sum2) / 2.0 - d1 * (d1 + 1.0) / 2.0;
  if (n <= kMannWhitneyExactMax) {
    // ways[k][s]: subsets of size k with doubled rank sum s
    const long total = std::accumulate(r2.begin(), r2.end(), 0L);
    const auto width = static_cast<std::size_t>(total) + 1;
    std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(width, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::size_t>(r2[i]);
      for (std::size_t k = std::min(i + 1, n1); k >= 1; --k) {
        for (std::size_t s = width - 1; s >= r; --s) {
          ways[k][s] += ways[k - 1][s - r];
          if (s == r) break;
        }
      }
    }
    res.p_value = two_sided_from_counts(ways[n1], static_cast<std::size_t>(sum2));
    res.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = d1 * d2 / 2.0;
    const double var = d1 * d2 / 12.0 * ((nn + 1.0) - tie_term(pooled) / (nn * (nn - 1.0)));
    if (!(var > 0.0)) throw DegenerateSample("mann-whitney: zero variance");
    res.p_value = two_sided_normal(res.statistic, mean, var);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Per-plane error analysis

struct PlaneComparison {
  std::optional<StatTestResult> result;
  std::string degenerate;  // reason when the test could not be run
};

struct PlaneErrorAnalysis {
  std::vector<double> axial;     // per z slice
  std::vector<double> coronal;   // per y slice
  std::vector<double> sagittal;  // per x slice
  PlaneComparison axial_vs_coronal;
  PlaneComparison axial_vs_sagittal;
};

inline PlaneComparison compare_planes(std::span<const double> a, std::span<const double> b) {
  PlaneComparison c;
  try {
    c.result = mann_whitney_u(a, b);
  } catch (const DegenerateSample& e) {
    c.degenerate = e.what();
  }
  return c;
}

inline PlaneErrorAnalysis per_plane_error_analysis(const VolumeF& pred, const VolumeF& truth) {
  if (pred.shape != truth.shape) {
    throw ShapeMismatch("per-plane analysis: " + shape_string(pred.shape) + " vs " + shape_string(truth.shape));
  }
  const auto [d, h, w] = pred.shape;
  if (d == 0 || h == 0 || w == 0) throw ShapeMismatch("per-plane analysis: empty volume");
  PlaneErrorAnalysis out;
  out.axial.assign(d, 0.0);
  out.coronal.assign(h, 0.0);
  out.sagittal.assign(w, 0.0);
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double r = static_cast<double>(pred.at(z, y, x)) - static_cast<double>(truth.at(z, y, x));
        const double e = r * r;
        out.axial[z] += e;
        out.coronal[y] += e;
        out.sagittal[x] += e;
      }
    }
  }
  for (auto& v : out.axial) v /= static_cast<double>(h * w);
  for (auto& v : out.coronal) v /= static_cast<double>(d * w);
  for (auto& v : out.sagittal) v /= static_cast<double>(d * h);
  out.axial_vs_coronal = compare_planes(out.axial, out.coronal);
  out.axial_vs_sagittal = compare_planes(out.axial, out.sagittal);
  return out;
}

}  // namespace mmgan

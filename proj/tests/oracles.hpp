#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Deliberately naive; only suitable for tiny inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace oracle {

// Midranks by sorting, independent of the library's doubled-rank helper.
std::vector<double> midranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = (static_cast<double>(i + j) + 1.0) / 2.0;
    i = j;
  }
  return r;
}

// Two-sided p by enumerating every sign assignment of the nonzero |d| ranks.
double wilcoxon_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
  const auto r = midranks(mag);
  double observed = 0.0, total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += r[i];
    if (d[i] > 0) observed += r[i];
  }
  const double centre = total / 2.0;
  const double dist = std::abs(observed - centre);
  std::size_t extreme = 0;
  const std::size_t n = d.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) w += r[i];
    }
    if (std::abs(w - centre) >= dist - 1e-9) ++extreme;
  }
  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(std::size_t{1} << n));
}

// Two-sided p by enumerating every split of the pooled sample: twice the
// smaller tail, which stays well defined when ties make the null asymmetric.
double mann_whitney_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r = midranks(pooled);
  const std::size_t n = pooled.size(), n1 = a.size();
  double observed = 0.0;
  for (std::size_t i = 0; i < n1; ++i) observed += r[i];
  std::size_t lower = 0, upper = 0, total = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcountll(mask)) != n1) continue;
    ++total;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) s += r[i];
    }
    lower += s <= observed + 1e-9;
    upper += s >= observed - 1e-9;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(lower, upper)) / static_cast<double>(total));
}

// Direct 2D window loop: every valid 11x11 window, weights from the 2D
// Gaussian normalized to sum 1, statistics accumulated per window.
double reference_ssim(const std::vector<float>& a, const std::vector<float>& b, int h, int w, double range = 1.0) {
  const int win = 11;
  const double sigma = 1.5;
  std::vector<double> g(win * win);
  double gsum = 0.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - win / 2, dj = j - win / 2;
      g[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      gsum += g[i * win + j];
    }
  }
  for (auto& v : g) v /= gsum;
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + win <= h; ++y0) {
    for (int x0 = 0; x0 + win <= w; ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double wt = g[i * win + j];
          mx += wt * a[(y0 + i) * w + x0 + j];
          my += wt * b[(y0 + i) * w + x0 + j];
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double wt = g[i * win + j];
          const double dx = a[(y0 + i) * w + x0 + j] - mx;
          const double dy = b[(y0 + i) * w + x0 + j] - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      }
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace oracle

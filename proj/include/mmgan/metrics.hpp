#pragma once

// Image quality metrics. Everything is computed in double precision on
// row-major float data; a "volume" is a stack of equally sized 2D slices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmgan/error.hpp"

namespace mmgan {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrMseFloor = 1e-10;

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline void check_same_size(std::size_t a, std::size_t b, const char* who) {
  if (a != b) throw ShapeMismatch(std::string(who) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " elements");
}

// (x - min) / (max - min).
inline std::vector<float> renormalize_01(std::span<const float> x) {
  if (x.empty()) throw ConstantImage("empty image");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double min = *lo, max = *hi;
  if (!(max > min)) throw ConstantImage("max equals min (" + std::to_string(min) + ")");
  const double range = max - min;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>((x[i] - min) / range);
  return out;
}

inline double mse(std::span<const float> a, std::span<const float> b) {
  check_same_size(a.size(), b.size(), "mse");
  if (a.empty()) throw ShapeMismatch("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double psnr_from_mse(double m, double i_max = 1.0) {
  if (!(i_max > 0.0)) throw ConfigError("psnr: i_max must be positive");
  if (m < kPsnrMseFloor) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(i_max * i_max / m));
}

inline double psnr(std::span<const float> a, std::span<const float> b, double i_max = 1.0) {
  return psnr_from_mse(mse(a, b), i_max);
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

namespace detail {

// Valid-mode separable filtering of an h x w image.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace detail

// Mean SSIM over all fully contained Gaussian windows of one h x w image.
inline double ssim_2d(std::span<const float> a, std::span<const float> b, int h, int w, double data_range = 1.0,
                      const SsimParams& p = {}) {
  check_same_size(a.size(), b.size(), "ssim");
  check_same_size(a.size(), static_cast<std::size_t>(h) * static_cast<std::size_t>(w), "ssim");
  if (h < p.window || w < p.window) {
    throw ShapeMismatch("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the window");
  }
  const auto k = gaussian_kernel(p.window, p.sigma);
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i];
    y[i] = b[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::filter_valid(x, h, w, k);
  const auto my = detail::filter_valid(y, h, w, k);
  const auto mxx = detail::filter_valid(xx, h, w, k);
  const auto myy = detail::filter_valid(yy, h, w, k);
  const auto mxy = detail::filter_valid(xy, h, w, k);
  const double c1 = (p.k1 * data_range) * (p.k1 * data_range);
  const double c2 = (p.k2 * data_range) * (p.k2 * data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// Mean of per-slice SSIM over a stack of `slices` h x w images.
inline double ssim_volume(std::span<const float> a, std::span<const float> b, std::size_t slices, int h, int w,
                          double data_range = 1.0, const SsimParams& p = {}) {
  check_same_size(a.size(), b.size(), "ssim");
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  check_same_size(a.size(), slices * plane, "ssim");
  if (slices == 0) throw ShapeMismatch("ssim: empty volume");
  double s = 0.0;
  for (std::size_t z = 0; z < slices; ++z) {
    s += ssim_2d(a.subspan(z * plane, plane), b.subspan(z * plane, plane), h, w, data_range, p);
  }
  return s / static_cast<double>(slices);
}

struct ImageMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

// All three metrics for one volume pair, optionally after independent [0, 1]
// renormalization of prediction and ground truth.
inline ImageMetrics volume_metrics(std::span<const float> pred, std::span<const float> truth, std::size_t slices, int h,
                                   int w, bool renormalize = true, double i_max = 1.0) {
  ImageMetrics m;
  if (renormalize) {
    const auto p = renormalize_01(pred);
    const auto t = renormalize_01(truth);
    m.mse = mse(p, t);
    m.ssim = ssim_volume(p, t, slices, h, w, i_max);
  } else {
    m.mse = mse(pred, truth);
    m.ssim = ssim_volume(pred, truth, slices, h, w, i_max);
  }
  m.psnr = psnr_from_mse(m.mse, i_max);
  return m;
}

}  // namespace mmgan

#pragma once

// Dense Gaussian affinity W over RGBXY (or XY) pixel features:
//
//   W_pq = exp(-|xy_p - xy_q|^2 / (2 sigma_xy^2) - |rgb_p - rgb_q|^2 / (2 sigma_rgb^2))
//
// The diagonal W_pp = 1 is part of every product. Two backends:
//   exact: direct O(N^2) summation (a dense W is cached for small images).
//   fast:  the same weights summed over a truncated spatial window of
//          half-width ceil(3 sigma_xy) (capped at the image extent); separable
//          1-D passes for XY features.
//          Linear in N, relative error well below 1% on natural-looking images.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "rloss/grid.hpp"

namespace rloss {

enum class FeatureSpace { xy, rgbxy };
enum class Backend { exact, fast };

struct GaussianKernelSpec {
  double sigma_xy = 6.0;
  double sigma_rgb = 12.0;
  FeatureSpace feature_space = FeatureSpace::rgbxy;

  void validate() const {
    if (!(sigma_xy > 0.0) || !std::isfinite(sigma_xy)) throw std::invalid_argument("sigma_xy must be positive and finite");
    if (!(sigma_rgb > 0.0) || !std::isfinite(sigma_rgb))
      throw std::invalid_argument("sigma_rgb must be positive and finite");
  }
};

struct AffinityOptions {
  Backend backend = Backend::exact;
  /// With the fast backend, images of at most this many pixels still use exact products.
  std::size_t exact_fallback_pixels = 4096;
  /// Exact backend keeps a dense N x N matrix up to this many pixels.
  std::size_t dense_cache_pixels = 2048;
  int threads = 1;
};

class AffinityOperator {
 public:
  AffinityOperator(ImageGrid image, GaussianKernelSpec kernel, AffinityOptions options = {})
      : image_(std::move(image)), kernel_(kernel), options_(options) {
    kernel_.validate();
    if (options_.threads < 1) options_.threads = 1;
    inv2_xy_ = 1.0 / (2.0 * kernel_.sigma_xy * kernel_.sigma_xy);
    inv2_rgb_ = kernel_.feature_space == FeatureSpace::rgbxy ? 1.0 / (2.0 * kernel_.sigma_rgb * kernel_.sigma_rgb) : 0.0;
    build_window_tables();
    const std::size_t n = pixel_count();
    if (n <= options_.dense_cache_pixels) {
      dense_.assign(n * n, 0.0);
      parallel_rows(n, [&](std::size_t p) {
        for (std::size_t q = 0; q < n; ++q) dense_[p * n + q] = kernel_weight(p, q);
      });
    }
    degree_ = matvec(std::vector<double>(n, 1.0));
  }

  const ImageGrid& image() const noexcept { return image_; }
  const GaussianKernelSpec& kernel() const noexcept { return kernel_; }
  const AffinityOptions& options() const noexcept { return options_; }
  std::size_t pixel_count() const noexcept { return image_.pixel_count(); }

  /// True when `apply`/`matvec` route through the windowed backend.
  bool uses_fast_path() const noexcept {
    return options_.backend == Backend::fast && pixel_count() > options_.exact_fallback_pixels;
  }

  double kernel_weight(std::size_t p, std::size_t q) const {
    const double dx = image_.x(p) - image_.x(q);
    const double dy = image_.y(p) - image_.y(q);
    double arg = (dx * dx + dy * dy) * inv2_xy_;
    if (kernel_.feature_space == FeatureSpace::rgbxy) {
      double c2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double dc = static_cast<double>(image_.channel(p, c)) - static_cast<double>(image_.channel(q, c));
        c2 += dc * dc;
      }
      arg += c2 * inv2_rgb_;
    }
    return std::exp(-arg);
  }

  /// Degree vector d = W 1 from the configured backend; computed once.
  const std::vector<double>& degree() const noexcept { return degree_; }

  std::vector<double> matvec(std::span<const double> v) const { return column0(apply(as_column(v))); }
  std::vector<double> matvec_exact(std::span<const double> v) const { return column0(apply_exact(as_column(v))); }
  std::vector<double> matvec_fast(std::span<const double> v) const { return column0(apply_fast(as_column(v))); }

  /// W * M for every column of M through the configured backend.
  Matrix apply(const Matrix& m) const { return uses_fast_path() ? apply_fast(m) : apply_exact(m); }

  Matrix apply_exact(const Matrix& m) const {
    check_rows(m);
    const std::size_t n = pixel_count();
    const std::size_t k = m.cols();
    Matrix out(n, k);
    if (!dense_.empty()) {
      parallel_rows(n, [&](std::size_t p) {
        auto dst = out.row(p);
        const double* w = dense_.data() + p * n;
        for (std::size_t q = 0; q < n; ++q) {
          auto src = m.row(q);
          for (std::size_t c = 0; c < k; ++c) dst[c] += w[q] * src[c];
        }
      });
    } else {
      parallel_rows(n, [&](std::size_t p) {
        auto dst = out.row(p);
        for (std::size_t q = 0; q < n; ++q) {
          const double w = kernel_weight(p, q);
          auto src = m.row(q);
          for (std::size_t c = 0; c < k; ++c) dst[c] += w * src[c];
        }
      });
    }
    return out;
  }

  Matrix apply_fast(const Matrix& m) const {
    check_rows(m);
    return kernel_.feature_space == FeatureSpace::xy ? separable_blur(m) : windowed_sum(m);
  }

  int window_radius() const noexcept { return radius_; }

 private:
  static Matrix as_column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data().begin());
    return m;
  }

  static std::vector<double> column0(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

  void check_rows(const Matrix& m) const {
    if (m.rows() != pixel_count()) throw DimensionError("affinity operand has wrong number of rows");
  }

  void parallel_rows(std::size_t n, const std::function<void(std::size_t)>& body) const {
    const auto t = static_cast<std::size_t>(options_.threads);
    if (t <= 1 || n < 2 * t) {
      for (std::size_t p = 0; p < n; ++p) body(p);
      return;
    }
    std::vector<std::jthread> workers;
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t w = 0; w < t; ++w) {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      workers.emplace_back([&body, lo, hi] {
        for (std::size_t p = lo; p < hi; ++p) body(p);
      });
    }
  }

  void build_window_tables() {
    // Offsets beyond the image extent never occur, so the window is capped there.
    const double reach = std::ceil(3.0 * kernel_.sigma_xy);
    radius_ = static_cast<int>(std::min(reach, static_cast<double>(std::max(image_.width(), image_.height()) - 1)));
    const int side = 2 * radius_ + 1;
    spatial_1d_.resize(static_cast<std::size_t>(side));
    for (int d = -radius_; d <= radius_; ++d)
      spatial_1d_[static_cast<std::size_t>(d + radius_)] = std::exp(-static_cast<double>(d * d) * inv2_xy_);
    if (kernel_.feature_space == FeatureSpace::rgbxy) {
      spatial_2d_.resize(static_cast<std::size_t>(side * side));
      for (int dy = -radius_; dy <= radius_; ++dy)
        for (int dx = -radius_; dx <= radius_; ++dx)
          spatial_2d_[static_cast<std::size_t>((dy + radius_) * side + dx + radius_)] =
              std::exp(-static_cast<double>(dx * dx + dy * dy) * inv2_xy_);
      // Colors are 8-bit, so squared color distances are integers in [0, 3*255^2].
      color_.resize(3 * 255 * 255 + 1);
      for (std::size_t d2 = 0; d2 < color_.size(); ++d2) color_[d2] = std::exp(-static_cast<double>(d2) * inv2_rgb_);
    }
  }

  Matrix windowed_sum(const Matrix& m) const {
    const int w = image_.width();
    const int h = image_.height();
    const int side = 2 * radius_ + 1;
    const std::size_t k = m.cols();
    const auto rgb = image_.rgb();
    Matrix out(pixel_count(), k);
    parallel_rows(pixel_count(), [&](std::size_t p) {
      const int px = image_.x(p);
      const int py = image_.y(p);
      const int r0 = rgb[3 * p], g0 = rgb[3 * p + 1], b0 = rgb[3 * p + 2];
      auto dst = out.row(p);
      const int y_lo = std::max(0, py - radius_), y_hi = std::min(h - 1, py + radius_);
      const int x_lo = std::max(0, px - radius_), x_hi = std::min(w - 1, px + radius_);
      for (int qy = y_lo; qy <= y_hi; ++qy) {
        const double* srow = spatial_2d_.data() + (qy - py + radius_) * side;
        for (int qx = x_lo; qx <= x_hi; ++qx) {
          const std::size_t q = static_cast<std::size_t>(qy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(qx);
          const int dr = r0 - rgb[3 * q], dg = g0 - rgb[3 * q + 1], db = b0 - rgb[3 * q + 2];
          const double wt = srow[qx - px + radius_] * color_[static_cast<std::size_t>(dr * dr + dg * dg + db * db)];
          auto src = m.row(q);
          for (std::size_t c = 0; c < k; ++c) dst[c] += wt * src[c];
        }
      }
    });
    return out;
  }

  Matrix separable_blur(const Matrix& m) const {
    const int w = image_.width();
    const int h = image_.height();
    const std::size_t k = m.cols();
    const auto uw = static_cast<std::size_t>(w);
    Matrix tmp(pixel_count(), k);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto dst = tmp.row(static_cast<std::size_t>(y) * uw + static_cast<std::size_t>(x));
        for (int qx = std::max(0, x - radius_); qx <= std::min(w - 1, x + radius_); ++qx) {
          const double wt = spatial_1d_[static_cast<std::size_t>(qx - x + radius_)];
          auto src = m.row(static_cast<std::size_t>(y) * uw + static_cast<std::size_t>(qx));
          for (std::size_t c = 0; c < k; ++c) dst[c] += wt * src[c];
        }
      }
    Matrix out(pixel_count(), k);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto dst = out.row(static_cast<std::size_t>(y) * uw + static_cast<std::size_t>(x));
        for (int qy = std::max(0, y - radius_); qy <= std::min(h - 1, y + radius_); ++qy) {
          const double wt = spatial_1d_[static_cast<std::size_t>(qy - y + radius_)];
          auto src = tmp.row(static_cast<std::size_t>(qy) * uw + static_cast<std::size_t>(x));
          for (std::size_t c = 0; c < k; ++c) dst[c] += wt * src[c];
        }
      }
    return out;
  }

  ImageGrid image_;
  GaussianKernelSpec kernel_;
  AffinityOptions options_;
  double inv2_xy_ = 0.0;
  double inv2_rgb_ = 0.0;
  int radius_ = 0;
  std::vector<double> spatial_1d_;
  std::vector<double> spatial_2d_;
  std::vector<double> color_;
  std::vector<double> dense_;
  std::vector<double> degree_;
};

}  // namespace rloss

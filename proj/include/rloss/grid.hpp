#pragma once

// Core value types: RGB images, partial labelings and row-stochastic soft
// segmentations. Pixels are indexed row-major, p = y * width + x.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rloss/errors.hpp"

namespace rloss {

/// Dense row-major matrix of doubles. Rows are pixels, columns are labels.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Column dot product <A^k, B^k>.
inline double column_dot(const Matrix& a, std::size_t ca, const Matrix& b, std::size_t cb) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, ca) * b(r, cb);
  return s;
}

class ImageGrid {
 public:
  ImageGrid(int width, int height, std::vector<std::uint8_t> rgb)
      : width_(width), height_(height), rgb_(std::move(rgb)) {
    if (width < 1 || height < 1) throw DimensionError("image must have at least one pixel");
    if (rgb_.size() != 3 * pixel_count()) throw DimensionError("rgb buffer size does not match 3*width*height");
  }

  /// Image filled with one color.
  static ImageGrid constant(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::vector<std::uint8_t> rgb;
    rgb.reserve(3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
    for (int i = 0; i < width * height; ++i) rgb.insert(rgb.end(), {r, g, b});
    return ImageGrid(width, height, std::move(rgb));
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  int x(std::size_t p) const noexcept { return static_cast<int>(p % static_cast<std::size_t>(width_)); }
  int y(std::size_t p) const noexcept { return static_cast<int>(p / static_cast<std::size_t>(width_)); }

  std::uint8_t channel(std::size_t p, int c) const { return rgb_[3 * p + static_cast<std::size_t>(c)]; }
  std::span<const std::uint8_t> rgb() const noexcept { return rgb_; }

  bool operator==(const ImageGrid&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> rgb_;
};

/// Per-pixel optional label in {0..K-1}.
class PartialLabeling {
 public:
  static constexpr int kUnlabeled = -1;

  PartialLabeling(int width, int height, int num_labels, std::vector<int> labels)
      : width_(width), height_(height), num_labels_(num_labels), labels_(std::move(labels)) {
    if (width < 1 || height < 1) throw DimensionError("labeling must have at least one pixel");
    if (num_labels < 2) throw InvalidLabelError("label count K must be at least 2");
    if (labels_.size() != pixel_count()) throw DimensionError("label buffer size does not match width*height");
    for (int l : labels_) {
      if (l != kUnlabeled && (l < 0 || l >= num_labels_))
        throw InvalidLabelError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_labels_) + ")");
    }
  }

  static PartialLabeling unlabeled(int width, int height, int num_labels) {
    return {width, height, num_labels,
            std::vector<int>(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), kUnlabeled)};
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int num_labels() const noexcept { return num_labels_; }
  std::size_t pixel_count() const noexcept { return labels_.size(); }

  bool is_labeled(std::size_t p) const { return labels_[p] != kUnlabeled; }
  int label(std::size_t p) const { return labels_[p]; }
  std::span<const int> labels() const noexcept { return labels_; }

  std::vector<std::size_t> labeled_pixels() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < labels_.size(); ++p)
      if (is_labeled(p)) out.push_back(p);
    return out;
  }

  std::vector<std::size_t> unlabeled_pixels() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < labels_.size(); ++p)
      if (!is_labeled(p)) out.push_back(p);
    return out;
  }

  std::size_t labeled_count() const {
    return static_cast<std::size_t>(std::count_if(labels_.begin(), labels_.end(), [](int l) { return l != kUnlabeled; }));
  }

  bool fully_labeled() const { return labeled_count() == labels_.size(); }

  bool operator==(const PartialLabeling&) const = default;

 private:
  int width_;
  int height_;
  int num_labels_;
  std::vector<int> labels_;
};

/// N x K row-stochastic matrix. Construction validates the simplex invariant.
class SoftSegmentation {
 public:
  static constexpr double kSimplexTolerance = 1e-6;

  explicit SoftSegmentation(Matrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() < 1 || probs_.cols() < 2) throw DimensionError("soft segmentation needs N >= 1 and K >= 2");
    for (std::size_t p = 0; p < probs_.rows(); ++p) {
      double sum = 0.0;
      for (double v : probs_.row(p)) {
        if (!(v >= 0.0) || !std::isfinite(v))
          throw SimplexError("row " + std::to_string(p) + " has a negative or non-finite entry");
        sum += v;
      }
      if (std::abs(sum - 1.0) > kSimplexTolerance)
        throw SimplexError("row " + std::to_string(p) + " sums to " + std::to_string(sum));
    }
  }

  static SoftSegmentation uniform(std::size_t n, std::size_t k) {
    return SoftSegmentation(Matrix(n, k, 1.0 / static_cast<double>(k)));
  }

  static SoftSegmentation one_hot(std::span<const int> labels, std::size_t k) {
    Matrix m(labels.size(), k);
    for (std::size_t p = 0; p < labels.size(); ++p) m(p, static_cast<std::size_t>(labels[p])) = 1.0;
    return SoftSegmentation(std::move(m));
  }

  std::size_t pixel_count() const noexcept { return probs_.rows(); }
  std::size_t num_labels() const noexcept { return probs_.cols(); }

  std::span<const double> row(std::size_t p) const { return probs_.row(p); }
  std::vector<double> column(std::size_t k) const { return probs_.column(k); }
  double operator()(std::size_t p, std::size_t k) const { return probs_(p, k); }
  const Matrix& matrix() const noexcept { return probs_; }

  bool is_discrete() const {
    for (std::size_t p = 0; p < probs_.rows(); ++p)
      for (double v : probs_.row(p))
        if (v != 0.0 && v != 1.0) return false;
    return true;
  }

  /// Per-pixel argmax; ties go to the smallest label index.
  std::vector<int> argmax() const {
    std::vector<int> out(probs_.rows());
    for (std::size_t p = 0; p < probs_.rows(); ++p) {
      auto r = probs_.row(p);
      out[p] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
  }

 private:
  Matrix probs_;
};

}  // namespace rloss

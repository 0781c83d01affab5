#pragma once

// Regularized losses over a soft segmentation S (N x K) and their gradients
// with respect to S. All accumulation is in double precision.
//
//   partial CE:  sum_{p in labeled} -log S_p^{Y_p}
//   CRF:         sum_k <S^k, W (1 - S^k)>
//   NC:          sum_k <S^k, W^ (1 - S^k)> / (<d, S^k> + eps),   d = W^ 1
//   KC:          CRF + gamma * NC
//
// Functions taking a Matrix accept any N x K array (no simplex check), which
// is what finite-difference checks need; SoftSegmentation overloads forward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rloss/affinity.hpp"
#include "rloss/errors.hpp"
#include "rloss/grid.hpp"

namespace rloss {

struct LossConfig {
  double lambda = 1.0;
  double gamma = 1.0;
  double epsilon = 1e-9;
  /// Use the reduced gradients -2WS^k (CRF) and the eps-free NC form instead
  /// of the full differential. Both give the same softmax-parameter gradient.
  bool paper_gradient = false;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw std::invalid_argument("lambda must be finite and >= 0");
    if (!std::isfinite(gamma) || gamma < 0.0) throw std::invalid_argument("gamma must be finite and >= 0");
    if (!std::isfinite(epsilon) || !(epsilon > 0.0)) throw std::invalid_argument("epsilon must be finite and > 0");
  }
};

struct LossReport {
  double value = 0.0;
  std::optional<Matrix> gradient;
};

inline double clamped_log(double v, double eps) { return std::log(std::max(v, eps)); }

namespace detail {

inline void check_shape(const Matrix& s, const AffinityOperator& w) {
  if (s.rows() != w.pixel_count()) throw DimensionError("segmentation rows do not match affinity size");
  if (s.cols() < 1) throw DimensionError("segmentation needs at least one label");
}

/// Per label: association <S^k, d> and self term <S^k, W S^k>.
struct CutTerms {
  Matrix ws;
  std::vector<double> assoc;
  std::vector<double> self;
};

inline CutTerms cut_terms(const Matrix& s, const AffinityOperator& w) {
  check_shape(s, w);
  CutTerms t{w.apply(s), std::vector<double>(s.cols(), 0.0), std::vector<double>(s.cols(), 0.0)};
  const auto& d = w.degree();
  for (std::size_t p = 0; p < s.rows(); ++p)
    for (std::size_t k = 0; k < s.cols(); ++k) {
      t.assoc[k] += s(p, k) * d[p];
      t.self[k] += s(p, k) * t.ws(p, k);
    }
  return t;
}

}  // namespace detail

inline LossReport partial_cross_entropy(const Matrix& s, const PartialLabeling& y, double epsilon, bool with_gradient) {
  if (s.rows() != y.pixel_count()) throw DimensionError("segmentation rows do not match labeling size");
  if (static_cast<std::size_t>(y.num_labels()) > s.cols()) throw DimensionError("labeling has more labels than S");
  LossReport r;
  if (with_gradient) r.gradient.emplace(s.rows(), s.cols());
  for (std::size_t p = 0; p < s.rows(); ++p) {
    if (!y.is_labeled(p)) continue;
    const auto k = static_cast<std::size_t>(y.label(p));
    const double v = s(p, k);
    r.value -= clamped_log(v, epsilon);
    if (with_gradient) (*r.gradient)(p, k) = -1.0 / std::max(v, epsilon);
  }
  return r;
}

inline LossReport crf_loss(const Matrix& s, const AffinityOperator& w, const LossConfig& cfg, bool with_gradient) {
  auto t = detail::cut_terms(s, w);
  LossReport r;
  for (std::size_t k = 0; k < s.cols(); ++k) r.value += t.assoc[k] - t.self[k];
  if (with_gradient) {
    const auto& d = w.degree();
    Matrix g(s.rows(), s.cols());
    for (std::size_t p = 0; p < s.rows(); ++p)
      for (std::size_t k = 0; k < s.cols(); ++k)
        g(p, k) = (cfg.paper_gradient ? 0.0 : d[p]) - 2.0 * t.ws(p, k);
    r.gradient = std::move(g);
  }
  return r;
}

inline LossReport nc_loss(const Matrix& s, const AffinityOperator& w_hat, const LossConfig& cfg, bool with_gradient) {
  auto t = detail::cut_terms(s, w_hat);
  const auto& d = w_hat.degree();
  const std::size_t kk = s.cols();
  std::vector<double> denom(kk);
  LossReport r;
  for (std::size_t k = 0; k < kk; ++k) {
    denom[k] = t.assoc[k] + cfg.epsilon;
    r.value += (t.assoc[k] - t.self[k]) / denom[k];
  }
  if (with_gradient) {
    Matrix g(s.rows(), kk);
    for (std::size_t k = 0; k < kk; ++k) {
      const double b = denom[k];
      const double cut = t.assoc[k] - t.self[k];
      for (std::size_t p = 0; p < s.rows(); ++p) {
        if (cfg.paper_gradient)
          g(p, k) = t.self[k] * d[p] / (b * b) - 2.0 * t.ws(p, k) / b;
        else
          g(p, k) = (d[p] - 2.0 * t.ws(p, k)) / b - cut * d[p] / (b * b);
      }
    }
    r.gradient = std::move(g);
  }
  return r;
}

inline LossReport kc_loss(const Matrix& s, const AffinityOperator& w, const AffinityOperator& w_hat,
                          const LossConfig& cfg, bool with_gradient) {
  auto r = crf_loss(s, w, cfg, with_gradient);
  if (cfg.gamma == 0.0) return r;
  const auto nc = nc_loss(s, w_hat, cfg, with_gradient);
  r.value += cfg.gamma * nc.value;
  if (with_gradient) {
    auto g = r.gradient->data();
    auto gn = nc.gradient->data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.gamma * gn[i];
  }
  return r;
}

/// sum_{p,q} W_pq |S_p - S_q|^2 by direct double loop with exact weights.
inline double potts_quadratic_relaxation(const Matrix& s, const AffinityOperator& w) {
  constexpr std::size_t kMaxPixels = 4096;
  detail::check_shape(s, w);
  if (s.rows() > kMaxPixels)
    throw SizeError("quadratic relaxation is limited to " + std::to_string(kMaxPixels) + " pixels");
  double total = 0.0;
  for (std::size_t p = 0; p < s.rows(); ++p)
    for (std::size_t q = 0; q < s.rows(); ++q) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < s.cols(); ++k) {
        const double diff = s(p, k) - s(q, k);
        d2 += diff * diff;
      }
      if (d2 != 0.0) total += w.kernel_weight(p, q) * d2;
    }
  return total;
}

/// Split objective coupling the model output S and a proposal X:
///   sum_{labeled} H(Y_p, S_p) + lambda R_CRF(X) + sum_{unlabeled} KL(X_p | S_p).
/// X must equal one-hot(Y_p) on labeled pixels.
inline double adm_objective(const Matrix& s, const Matrix& x, const PartialLabeling& y, const AffinityOperator& w,
                            const LossConfig& cfg) {
  if (x.rows() != s.rows() || x.cols() != s.cols()) throw DimensionError("proposal shape differs from S");
  constexpr double kClampTolerance = 1e-9;
  for (std::size_t p = 0; p < x.rows(); ++p) {
    if (!y.is_labeled(p)) continue;
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double target = static_cast<int>(k) == y.label(p) ? 1.0 : 0.0;
      if (std::abs(x(p, k) - target) > kClampTolerance)
        throw ConstraintError("proposal differs from the scribble label at pixel " + std::to_string(p));
    }
  }
  double value = partial_cross_entropy(s, y, cfg.epsilon, false).value;
  value += cfg.lambda * crf_loss(x, w, cfg, false).value;
  for (std::size_t p = 0; p < x.rows(); ++p) {
    if (y.is_labeled(p)) continue;
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xk = x(p, k);
      if (xk > 0.0) value += xk * (clamped_log(xk, cfg.epsilon) - clamped_log(s(p, k), cfg.epsilon));
    }
  }
  return value;
}

inline LossReport partial_cross_entropy(const SoftSegmentation& s, const PartialLabeling& y, double epsilon = 1e-9) {
  return partial_cross_entropy(s.matrix(), y, epsilon, true);
}
inline LossReport crf_loss(const SoftSegmentation& s, const AffinityOperator& w, const LossConfig& cfg = {},
                           bool with_gradient = true) {
  return crf_loss(s.matrix(), w, cfg, with_gradient);
}
inline LossReport nc_loss(const SoftSegmentation& s, const AffinityOperator& w_hat, const LossConfig& cfg = {},
                          bool with_gradient = true) {
  return nc_loss(s.matrix(), w_hat, cfg, with_gradient);
}
inline LossReport kc_loss(const SoftSegmentation& s, const AffinityOperator& w, const AffinityOperator& w_hat,
                          const LossConfig& cfg = {}, bool with_gradient = true) {
  return kc_loss(s.matrix(), w, w_hat, cfg, with_gradient);
}
inline double potts_quadratic_relaxation(const SoftSegmentation& s, const AffinityOperator& w) {
  return potts_quadratic_relaxation(s.matrix(), w);
}
inline double adm_objective(const SoftSegmentation& s, const SoftSegmentation& x, const PartialLabeling& y,
                            const AffinityOperator& w, const LossConfig& cfg) {
  return adm_objective(s.matrix(), x.matrix(), y, w, cfg);
}

}  // namespace rloss

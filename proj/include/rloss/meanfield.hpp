#pragma once

// Proposal generation by dense-CRF mean-field inference, read as a
// convex-concave procedure on the entropy-barrier energy
//
//   E(X) = sum_{p unlabeled} [H(X_p, S~_p) - H(X_p)] + lambda * R_CRF(X).
//
// R_CRF is concave for positive semidefinite W, so linearizing it at the
// current iterate and minimizing the convex remainder over each simplex gives
// the closed-form parallel update
//
//   X_p^k <- S~_p^k exp(2 lambda [W X^k]_p) / z_p,
//
// which never increases E. Labeled pixels stay clamped to one-hot(Y_p).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rloss/affinity.hpp"
#include "rloss/errors.hpp"
#include "rloss/grid.hpp"
#include "rloss/losses.hpp"

namespace rloss {

struct MeanFieldOptions {
  int max_sweeps = 5;
  double tol = 1e-4;
  /// Diagnostic: use exp(-2 lambda [W X]) in the update. Breaks monotonicity.
  bool flip_pairwise_sign = false;
  /// Log a warning on stderr when the energy goes up.
  bool warn_on_increase = true;
};

struct MeanFieldState {
  SoftSegmentation proposal;
  SoftSegmentation unaries;
  int sweep_count = 0;
  std::vector<double> energy_trace;
};

namespace detail {

inline bool clamped_at(const PartialLabeling* y, std::size_t p) { return y != nullptr && y->is_labeled(p); }

inline void check_meanfield_shapes(const Matrix& x, const Matrix& unaries, const AffinityOperator& w,
                                   const PartialLabeling* y) {
  if (x.rows() != unaries.rows() || x.cols() != unaries.cols()) throw DimensionError("proposal and unaries differ in shape");
  if (x.rows() != w.pixel_count()) throw DimensionError("proposal rows do not match affinity size");
  if (y != nullptr && y->pixel_count() != x.rows()) throw DimensionError("labeling size does not match proposal");
}

}  // namespace detail

inline double barrier_energy(const Matrix& x, const Matrix& unaries, const AffinityOperator& w, const LossConfig& cfg,
                             const PartialLabeling* y = nullptr) {
  detail::check_meanfield_shapes(x, unaries, w, y);
  double e = 0.0;
  for (std::size_t p = 0; p < x.rows(); ++p) {
    if (detail::clamped_at(y, p)) continue;
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xk = x(p, k);
      if (xk > 0.0) e += xk * (clamped_log(xk, cfg.epsilon) - clamped_log(unaries(p, k), cfg.epsilon));
    }
  }
  return e + cfg.lambda * crf_loss(x, w, cfg, false).value;
}

inline double barrier_energy(const SoftSegmentation& x, const SoftSegmentation& unaries, const AffinityOperator& w,
                             const LossConfig& cfg, const PartialLabeling* y = nullptr) {
  return barrier_energy(x.matrix(), unaries.matrix(), w, cfg, y);
}

/// X^(0) = S~ with labeled pixels clamped; the trace starts with E(X^(0)).
inline MeanFieldState init_mean_field(const SoftSegmentation& unaries, const AffinityOperator& w, const LossConfig& cfg,
                                      const PartialLabeling* y = nullptr) {
  Matrix x = unaries.matrix();
  if (y != nullptr) {
    if (y->pixel_count() != x.rows()) throw DimensionError("labeling size does not match unaries");
    for (std::size_t p = 0; p < x.rows(); ++p) {
      if (!y->is_labeled(p)) continue;
      auto row = x.row(p);
      std::fill(row.begin(), row.end(), 0.0);
      row[static_cast<std::size_t>(y->label(p))] = 1.0;
    }
  }
  MeanFieldState state{SoftSegmentation(std::move(x)), unaries, 0, {}};
  state.energy_trace.push_back(barrier_energy(state.proposal, state.unaries, w, cfg, y));
  return state;
}

inline MeanFieldState mf_sweep(MeanFieldState state, const AffinityOperator& w, const LossConfig& cfg,
                               const PartialLabeling* y = nullptr, const MeanFieldOptions& opts = {}) {
  const Matrix& s = state.unaries.matrix();
  Matrix next = state.proposal.matrix();
  const std::size_t kk = next.cols();
  if (cfg.lambda == 0.0) {
    for (std::size_t p = 0; p < next.rows(); ++p)
      if (!detail::clamped_at(y, p)) std::copy(s.row(p).begin(), s.row(p).end(), next.row(p).begin());
  } else {
    const Matrix wx = w.apply(state.proposal.matrix());
    const double coupling = (opts.flip_pairwise_sign ? -2.0 : 2.0) * cfg.lambda;
    std::vector<double> a(kk);
    for (std::size_t p = 0; p < next.rows(); ++p) {
      if (detail::clamped_at(y, p)) continue;
      for (std::size_t k = 0; k < kk; ++k) a[k] = clamped_log(s(p, k), cfg.epsilon) + coupling * wx(p, k);
      const double top = *std::max_element(a.begin(), a.end());
      double z = 0.0;
      for (double& v : a) {
        v = std::exp(v - top);
        z += v;
      }
      if (!std::isfinite(z) || !(z > 0.0)) throw Error("mean-field update overflowed at pixel " + std::to_string(p));
      for (std::size_t k = 0; k < kk; ++k) next(p, k) = a[k] / z;
    }
  }
  state.proposal = SoftSegmentation(std::move(next));
  ++state.sweep_count;
  state.energy_trace.push_back(barrier_energy(state.proposal, state.unaries, w, cfg, y));
  return state;
}

struct ProposalResult {
  SoftSegmentation proposal;
  std::vector<double> energy_trace;
  int sweeps = 0;
  bool non_monotone = false;
};

/// Runs sweeps until |dE| <= tol * |E| or `max_sweeps` is reached.
inline ProposalResult generate_proposal(const SoftSegmentation& unaries, const AffinityOperator& w,
                                        const LossConfig& cfg, const PartialLabeling* y = nullptr,
                                        const MeanFieldOptions& opts = {}) {
  if (opts.max_sweeps < 1) throw std::invalid_argument("max_sweeps must be at least 1");
  auto state = init_mean_field(unaries, w, cfg, y);
  bool non_monotone = false;
  for (int it = 0; it < opts.max_sweeps; ++it) {
    state = mf_sweep(std::move(state), w, cfg, y, opts);
    const double prev = state.energy_trace[state.energy_trace.size() - 2];
    const double cur = state.energy_trace.back();
    if (cur > prev + 1e-12 * std::max(1.0, std::abs(prev))) {
      non_monotone = true;
      if (opts.warn_on_increase)
        std::cerr << "warning: mean-field energy increased at sweep " << state.sweep_count << " (" << prev << " -> "
                  << cur << "), stopping\n";
      break;
    }
    if (std::abs(cur - prev) <= opts.tol * std::abs(cur)) break;
  }
  return {state.proposal, state.energy_trace, state.sweep_count, non_monotone};
}

inline ProposalResult generate_proposal(const SoftSegmentation& unaries, const PartialLabeling& y,
                                        const AffinityOperator& w, const LossConfig& cfg,
                                        const MeanFieldOptions& opts = {}) {
  return generate_proposal(unaries, w, cfg, &y, opts);
}

}  // namespace rloss

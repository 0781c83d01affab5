#pragma once

// Training drivers over a per-pixel logit table standing in for a network:
//
//   direct: gradient descent on  sum_{labeled} H(Y_p, S_p) + lambda R(S)
//   adm:    alternate mean-field proposals X~ with descent on the full-mask
//           cross entropy  sum_{labeled} H(Y_p, S_p) + sum_{unlabeled} H(X~_p, S_p)
//
// Both start with a cross-entropy-only warmup on the scribbles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rloss/affinity.hpp"
#include "rloss/errors.hpp"
#include "rloss/grid.hpp"
#include "rloss/losses.hpp"
#include "rloss/meanfield.hpp"
#include "rloss/scribbles.hpp"

namespace rloss {

enum class LossKind { ce, crf, nc, kc };
enum class TrainMode { direct, adm };

struct TrainConfig {
  double learning_rate = 0.1;
  int warmup_iters = 50;
  int total_iters = 300;
  LossKind loss_kind = LossKind::kc;
  LossConfig loss{.lambda = 0.005, .gamma = 1000.0};
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::direct;
  /// Mean-field sweeps per proposal (adm).
  int adm_sweeps = 5;
  /// Descent iterations between proposal refreshes (adm).
  int adm_inner_iters = 20;
  /// Logits start uniform in [-init_scale, init_scale].
  double init_scale = 0.01;
  int log_every = 1;

  void validate() const {
    loss.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be > 0");
    if (warmup_iters < 0) throw std::invalid_argument("warmup_iters must be >= 0");
    if (total_iters < warmup_iters) throw std::invalid_argument("total_iters must be >= warmup_iters");
    if (adm_sweeps < 1) throw std::invalid_argument("adm_sweeps must be >= 1");
    if (adm_inner_iters < 1) throw std::invalid_argument("adm_inner_iters must be >= 1");
    if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
    if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
  }
};

inline Matrix row_softmax(const Matrix& logits) {
  Matrix s(logits.rows(), logits.cols());
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    auto in = logits.row(p);
    auto out = s.row(p);
    const double top = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      out[k] = std::exp(in[k] - top);
      z += out[k];
    }
    for (double& v : out) v /= z;
  }
  return s;
}

/// Pulls dL/dS back through the row softmax: dL/dtheta_p^k = S_p^k (G_p^k - <S_p, G_p>).
inline Matrix softmax_backward(const Matrix& s, const Matrix& grad_s) {
  Matrix g(s.rows(), s.cols());
  for (std::size_t p = 0; p < s.rows(); ++p) {
    const double inner = dot(s.row(p), grad_s.row(p));
    for (std::size_t k = 0; k < s.cols(); ++k) g(p, k) = s(p, k) * (grad_s(p, k) - inner);
  }
  return g;
}

/// N x K unconstrained logits; S = row-softmax(theta).
class LogitField {
 public:
  explicit LogitField(Matrix theta) : theta_(std::move(theta)) {}

  static LogitField random(std::size_t n, std::size_t k, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix theta(n, k);
    for (double& v : theta.data()) v = scale > 0.0 ? u(rng) : 0.0;
    return LogitField(std::move(theta));
  }

  SoftSegmentation forward() const { return SoftSegmentation(row_softmax(theta_)); }
  const Matrix& theta() const noexcept { return theta_; }
  Matrix& theta() noexcept { return theta_; }

 private:
  Matrix theta_;
};

struct TrainRecord {
  int iter = 0;
  double total = 0.0;
  double ce = 0.0;
  /// lambda * R(S), reported in the warmup phase too.
  double reg = 0.0;
  std::optional<double> miou;
  /// Split objective with the current proposal (adm only).
  std::optional<double> adm_objective;
};

struct TrainTrace {
  std::vector<TrainRecord> records;

  /// CSV with header `iter,total,ce,reg,miou`; miou is empty without ground truth.
  std::string to_csv() const {
    std::string out = "iter,total,ce,reg,miou\n";
    char buf[160];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,", r.iter, r.total, r.ce, r.reg);
      out += buf;
      if (r.miou) {
        std::snprintf(buf, sizeof buf, "%.6f", *r.miou);
        out += buf;
      }
      out += '\n';
    }
    return out;
  }
};

struct TrainResult {
  LogitField field;
  TrainTrace trace;
  /// One field per extra unlabeled image (semi-supervised mixing).
  std::vector<LogitField> unlabeled_fields;
};

/// An additional image that contributes only the regularization term.
struct UnlabeledImage {
  const AffinityOperator* w = nullptr;
  const AffinityOperator* w_hat = nullptr;
};

/// Mean intersection-over-union over the labels present in pred or gt.
inline double miou(std::span<const int> pred, std::span<const int> gt, int k) {
  if (pred.size() != gt.size()) throw DimensionError("prediction and ground truth differ in size");
  if (k < 2) throw std::invalid_argument("K must be at least 2");
  std::vector<std::size_t> inter(static_cast<std::size_t>(k), 0), uni(static_cast<std::size_t>(k), 0);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const int a = pred[p], b = gt[p];
    if (a < 0 || a >= k || b < 0 || b >= k) throw InvalidLabelError("label outside [0, K) in mIoU input");
    if (a == b) {
      ++inter[static_cast<std::size_t>(a)];
      ++uni[static_cast<std::size_t>(a)];
    } else {
      ++uni[static_cast<std::size_t>(a)];
      ++uni[static_cast<std::size_t>(b)];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t l = 0; l < inter.size(); ++l) {
    if (uni[l] == 0) continue;
    sum += static_cast<double>(inter[l]) / static_cast<double>(uni[l]);
    ++present;
  }
  return present == 0 ? 1.0 : sum / present;
}

inline double miou(const PartialLabeling& pred, const PartialLabeling& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height())
    throw DimensionError("prediction and ground truth differ in dimensions");
  if (!pred.fully_labeled() || !gt.fully_labeled()) throw InvalidLabelError("mIoU needs fully labeled images");
  return miou(pred.labels(), gt.labels(), std::max(pred.num_labels(), gt.num_labels()));
}

/// R(S) for the configured loss kind (zero for plain cross entropy).
inline LossReport regularizer(LossKind kind, const Matrix& s, const AffinityOperator& w, const AffinityOperator& w_hat,
                              const LossConfig& cfg, bool with_gradient) {
  switch (kind) {
    case LossKind::crf:
      return crf_loss(s, w, cfg, with_gradient);
    case LossKind::nc:
      return nc_loss(s, w_hat, cfg, with_gradient);
    case LossKind::kc:
      return kc_loss(s, w, w_hat, cfg, with_gradient);
    case LossKind::ce:
      break;
  }
  LossReport r;
  if (with_gradient) r.gradient.emplace(s.rows(), s.cols());
  return r;
}

namespace detail {

inline void check_training_inputs(const PartialLabeling& y, const AffinityOperator& w, const PartialLabeling* gt) {
  if (y.pixel_count() != w.pixel_count()) throw DimensionError("scribbles do not match the image size");
  if (y.labeled_count() == 0) throw std::invalid_argument("training needs at least one labeled pixel");
  if (gt != nullptr && gt->pixel_count() != y.pixel_count())
    throw DimensionError("ground truth does not match the image size");
}

inline std::optional<double> maybe_miou(const SoftSegmentation& s, const PartialLabeling* gt) {
  if (gt == nullptr) return std::nullopt;
  return miou(s.argmax(), gt->labels(), std::max<int>(gt->num_labels(), static_cast<int>(s.num_labels())));
}

inline void check_finite(int iter, double value, const Matrix* grad) {
  bool ok = std::isfinite(value);
  if (ok && grad != nullptr)
    ok = std::all_of(grad->data().begin(), grad->data().end(), [](double v) { return std::isfinite(v); });
  if (!ok) throw TrainingDivergence(iter, "training diverged at iteration " + std::to_string(iter));
}

inline void descend(Matrix& theta, const Matrix& step, double lr) {
  auto t = theta.data();
  auto g = step.data();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
}

}  // namespace detail

/// Gradient descent on the joint regularized loss. The scribbled image is
/// `w`'s image; `unlabeled` images add lambda * R of their own logit fields.
inline TrainResult train_direct(const PartialLabeling& y, const TrainConfig& tc, const AffinityOperator& w,
                                const AffinityOperator& w_hat, const PartialLabeling* gt = nullptr,
                                std::span<const UnlabeledImage> unlabeled = {}) {
  tc.validate();
  detail::check_training_inputs(y, w, gt);
  if (w_hat.pixel_count() != w.pixel_count()) throw DimensionError("W and W^ differ in size");
  const auto k = static_cast<std::size_t>(y.num_labels());
  const double lambda = tc.loss.lambda;

  TrainResult result{LogitField::random(w.pixel_count(), k, tc.seed, tc.init_scale), {}, {}};
  for (std::size_t j = 0; j < unlabeled.size(); ++j)
    result.unlabeled_fields.push_back(
        LogitField::random(unlabeled[j].w->pixel_count(), k, tc.seed + 1 + j, tc.init_scale));

  for (int it = 0;; ++it) {
    const bool regularize = it >= tc.warmup_iters;
    const bool last = it == tc.total_iters;
    const bool want_grad = !last;
    const Matrix s = row_softmax(result.field.theta());
    detail::check_finite(it, 0.0, &s);
    auto ce = partial_cross_entropy(s, y, tc.loss.epsilon, want_grad);
    auto reg = regularizer(tc.loss_kind, s, w, w_hat, tc.loss, want_grad && regularize);
    double reg_value = lambda * reg.value;

    std::vector<Matrix> extra_s;
    std::vector<LossReport> extra_reg;
    for (std::size_t j = 0; j < unlabeled.size(); ++j) {
      extra_s.push_back(row_softmax(result.unlabeled_fields[j].theta()));
      detail::check_finite(it, 0.0, &extra_s.back());
      extra_reg.push_back(regularizer(tc.loss_kind, extra_s.back(), *unlabeled[j].w, *unlabeled[j].w_hat, tc.loss,
                                      want_grad && regularize));
      reg_value += lambda * extra_reg.back().value;
    }

    const double total = ce.value + reg_value;
    if (it % tc.log_every == 0 || last) {
      const auto seg = SoftSegmentation(s);
      result.trace.records.push_back({it, total, ce.value, reg_value, detail::maybe_miou(seg, gt), std::nullopt});
    }
    detail::check_finite(it, total, nullptr);
    if (last) break;

    Matrix grad_s = std::move(*ce.gradient);
    if (regularize) {
      auto g = grad_s.data();
      auto r = reg.gradient->data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * r[i];
    }
    const Matrix step = softmax_backward(s, grad_s);
    detail::check_finite(it, total, &step);
    detail::descend(result.field.theta(), step, tc.learning_rate);

    if (regularize) {
      for (std::size_t j = 0; j < unlabeled.size(); ++j) {
        Matrix gs = std::move(*extra_reg[j].gradient);
        for (double& v : gs.data()) v *= lambda;
        const Matrix st = softmax_backward(extra_s[j], gs);
        detail::check_finite(it, total, &st);
        detail::descend(result.unlabeled_fields[j].theta(), st, tc.learning_rate);
      }
    }
  }
  return result;
}

/// Proposal-generation training. Only the CRF regularizer is supported. The
/// trace reports the joint regularized loss of the current output so it is
/// directly comparable with train_direct, plus the split objective.
inline TrainResult train_adm(const PartialLabeling& y, const TrainConfig& tc, const AffinityOperator& w,
                             const PartialLabeling* gt = nullptr) {
  tc.validate();
  if (tc.loss_kind != LossKind::crf) throw std::invalid_argument("proposal training is defined for the CRF loss only");
  detail::check_training_inputs(y, w, gt);
  const auto k = static_cast<std::size_t>(y.num_labels());
  const double lambda = tc.loss.lambda;
  const double eps = tc.loss.epsilon;
  MeanFieldOptions mf;
  mf.max_sweeps = tc.adm_sweeps;
  mf.warn_on_increase = false;

  TrainResult result{LogitField::random(w.pixel_count(), k, tc.seed, tc.init_scale), {}, {}};
  std::optional<SoftSegmentation> proposal;

  for (int it = 0;; ++it) {
    const bool last = it == tc.total_iters;
    const bool network_phase = it >= tc.warmup_iters;
    const Matrix s = row_softmax(result.field.theta());
    detail::check_finite(it, 0.0, &s);
    const SoftSegmentation seg(s);
    if (network_phase && !last && (it - tc.warmup_iters) % tc.adm_inner_iters == 0)
      proposal = generate_proposal(seg, y, w, tc.loss, mf).proposal;

    auto ce = partial_cross_entropy(s, y, eps, !last && !network_phase);
    const double reg_value = lambda * crf_loss(s, w, tc.loss, false).value;
    const double total = ce.value + reg_value;
    if (it % tc.log_every == 0 || last) {
      std::optional<double> split;
      if (proposal) split = adm_objective(s, proposal->matrix(), y, w, tc.loss);
      result.trace.records.push_back({it, total, ce.value, reg_value, detail::maybe_miou(seg, gt), split});
    }
    detail::check_finite(it, total, nullptr);
    if (last) break;

    Matrix grad_s;
    if (network_phase) {
      // Full-mask cross entropy; the proposal is one-hot(Y) on scribbles.
      grad_s = Matrix(s.rows(), s.cols());
      const Matrix& x = proposal->matrix();
      for (std::size_t p = 0; p < s.rows(); ++p)
        for (std::size_t c = 0; c < s.cols(); ++c)
          if (x(p, c) > 0.0) grad_s(p, c) = -x(p, c) / std::max(s(p, c), eps);
    } else {
      grad_s = std::move(*ce.gradient);
    }
    const Matrix step = softmax_backward(s, grad_s);
    detail::check_finite(it, total, &step);
    detail::descend(result.field.theta(), step, tc.learning_rate);
  }
  return result;
}

inline TrainResult train(const PartialLabeling& y, const TrainConfig& tc, const AffinityOperator& w,
                         const AffinityOperator& w_hat, const PartialLabeling* gt = nullptr) {
  return tc.mode == TrainMode::adm ? train_adm(y, tc, w, gt) : train_direct(y, tc, w, w_hat, gt);
}

// Synthetic scribble tasks ---------------------------------------------------

struct SyntheticSpec {
  int blocks = 2;
  int size = 32;
  /// Per-channel additive noise, uniform in [-noise, noise].
  int noise = 0;
  /// Stroke length as a fraction of the region's longer side; 0 gives a click.
  double scribble_length = 0.4;

  void validate() const {
    if (blocks < 2) throw std::invalid_argument("need at least 2 blocks");
    if (blocks > 255) throw std::invalid_argument("at most 255 blocks fit in a PGM labeling");
    if (size < 1) throw std::invalid_argument("size must be positive");
    if (noise < 0 || noise > 255) throw std::invalid_argument("noise must lie in [0, 255]");
    if (!(scribble_length >= 0.0 && scribble_length <= 1.0))
      throw std::invalid_argument("scribble length must lie in [0, 1]");
    const int cols = block_columns();
    const int rows = (blocks + cols - 1) / cols;
    if (cols > size || rows > size) throw std::invalid_argument("more blocks than the image can hold");
  }

  int block_columns() const { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(blocks)))); }
};

struct SyntheticTask {
  ImageGrid image;
  PartialLabeling scribbles;
  PartialLabeling ground_truth;
};

/// Blocks laid out row by row on a ceil(sqrt(B))-column grid (the last row
/// may hold fewer, wider blocks), one random color per block, one straight
/// stroke through each block's center along its longer side.
inline SyntheticTask make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int n = spec.size;
  const int cols = spec.block_columns();
  const int rows = (spec.blocks + cols - 1) / cols;

  struct Rect {
    int x0, x1, y0, y1;
  };
  std::vector<Rect> rects;
  for (int r = 0; r < rows; ++r) {
    const int in_row = r + 1 < rows ? cols : spec.blocks - cols * (rows - 1);
    const int y0 = r * n / rows, y1 = (r + 1) * n / rows;
    for (int c = 0; c < in_row; ++c) rects.push_back({c * n / in_row, (c + 1) * n / in_row, y0, y1});
  }

  std::uniform_int_distribution<int> channel(20, 235);
  std::vector<std::array<int, 3>> colors;
  for (int b = 0; b < spec.blocks; ++b) {
    std::array<int, 3> best{};
    double best_gap = -1.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::array<int, 3> c{channel(rng), channel(rng), channel(rng)};
      double gap = 1e9;
      for (const auto& o : colors) {
        const double d = std::hypot(c[0] - o[0], c[1] - o[1], c[2] - o[2]);
        gap = std::min(gap, d);
      }
      if (gap > best_gap) {
        best_gap = gap;
        best = c;
      }
      if (gap >= 100.0) break;
    }
    colors.push_back(best);
  }

  const auto npx = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  std::vector<int> gt(npx);
  for (std::size_t b = 0; b < rects.size(); ++b)
    for (int y = rects[b].y0; y < rects[b].y1; ++y)
      for (int x = rects[b].x0; x < rects[b].x1; ++x)
        gt[static_cast<std::size_t>(y) * static_cast<std::size_t>(n) + static_cast<std::size_t>(x)] = static_cast<int>(b);

  std::uniform_int_distribution<int> jitter(-spec.noise, spec.noise);
  std::vector<std::uint8_t> rgb(3 * npx);
  for (std::size_t p = 0; p < npx; ++p)
    for (int c = 0; c < 3; ++c) {
      const int v = colors[static_cast<std::size_t>(gt[p])][static_cast<std::size_t>(c)] + (spec.noise > 0 ? jitter(rng) : 0);
      rgb[3 * p + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }

  std::vector<int> scribbles(npx, PartialLabeling::kUnlabeled);
  for (std::size_t b = 0; b < rects.size(); ++b) {
    const auto& r = rects[b];
    const int w = r.x1 - r.x0, h = r.y1 - r.y0;
    const bool vertical = h >= w;
    const int side = vertical ? h : w;
    const int len = std::clamp(static_cast<int>(std::lround(spec.scribble_length * side)), 1, side);
    const int cx = r.x0 + (w - 1) / 2, cy = r.y0 + (h - 1) / 2;
    for (int i = 0; i < len; ++i) {
      const int offset = i - (len - 1) / 2;
      const int x = vertical ? cx : cx + offset;
      const int y = vertical ? cy + offset : cy;
      scribbles[static_cast<std::size_t>(y) * static_cast<std::size_t>(n) + static_cast<std::size_t>(x)] = static_cast<int>(b);
    }
  }

  return {ImageGrid(n, n, std::move(rgb)), PartialLabeling(n, n, spec.blocks, std::move(scribbles)),
          PartialLabeling(n, n, spec.blocks, std::move(gt))};
}

}  // namespace rloss

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "rloss/rloss.hpp"

using namespace rloss;

namespace {

TrainConfig short_config(LossKind kind, int warmup, int total) {
  TrainConfig tc;
  tc.loss_kind = kind;
  tc.warmup_iters = warmup;
  tc.total_iters = total;
  return tc;
}

SyntheticTask two_blocks(std::uint64_t seed, int size = 32, double length = 0.4) {
  return make_synthetic({2, size, 10, length}, seed);
}

}  // namespace

// Softmax ----------------------------------------------------------------------

TEST(Softmax, RowsOnSimplexAndShiftInvariant) {
  Matrix t(2, 3);
  t(0, 0) = 1000.0;
  t(0, 1) = 999.0;
  t(0, 2) = -1000.0;
  t(1, 0) = t(1, 1) = t(1, 2) = 0.5;
  const auto s = row_softmax(t);
  EXPECT_NEAR(s(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s(1, k), 1.0 / 3.0, 1e-15);
  EXPECT_NO_THROW(SoftSegmentation{s});
}

TEST(Softmax, EndToEndGradientMatchesFiniteDifferences) {
  const auto img = oracle::noise_image(6, 6, 4);
  const AffinityOperator w(img, {3.0, 40.0});
  const AffinityOperator w_hat(img, {2.0, 12.0, FeatureSpace::xy});
  std::vector<int> labels(36, PartialLabeling::kUnlabeled);
  labels[0] = 0;
  labels[7] = 1;
  labels[30] = 2;
  const PartialLabeling y(6, 6, 3, labels);
  LossConfig cfg;
  cfg.lambda = 0.3;
  cfg.gamma = 4.0;
  const auto theta = LogitField::random(36, 3, 9, 1.0).theta();
  const auto total = [&](const Matrix& th) {
    const Matrix s = row_softmax(th);
    return partial_cross_entropy(s, y, cfg.epsilon, false).value + cfg.lambda * kc_loss(s, w, w_hat, cfg, false).value;
  };
  const Matrix s = row_softmax(theta);
  Matrix gs = partial_cross_entropy(s, y, cfg.epsilon, true).gradient.value();
  const auto gr = kc_loss(s, w, w_hat, cfg, true).gradient.value();
  for (std::size_t i = 0; i < gs.data().size(); ++i) gs.data()[i] += cfg.lambda * gr.data()[i];
  const auto analytic = softmax_backward(s, gs);
  EXPECT_LE(oracle::max_relative_error(analytic, oracle::central_difference(total, theta)), 1e-4);
}

// mIoU ---------------------------------------------------------------------------

TEST(Miou, HandExamples) {
  const std::vector<int> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(miou(gt, gt, 2), 1.0);
  EXPECT_NEAR(miou(pred, gt, 2), 7.0 / 12.0, 1e-15);
  EXPECT_DOUBLE_EQ(miou(std::vector<int>(4, 0), std::vector<int>(4, 1), 2), 0.0);
}

TEST(Miou, SkipsLabelsAbsentFromBoth) {
  const std::vector<int> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  EXPECT_NEAR(miou(pred, gt, 5), 7.0 / 12.0, 1e-15);
}

TEST(Miou, Errors) {
  EXPECT_THROW(miou(std::vector<int>{0}, std::vector<int>{0, 1}, 2), DimensionError);
  EXPECT_THROW(miou(std::vector<int>{0}, std::vector<int>{0}, 1), std::invalid_argument);
  const PartialLabeling partial(2, 1, 2, {0, PartialLabeling::kUnlabeled});
  EXPECT_THROW(miou(partial, partial), InvalidLabelError);
}

// Synthetic tasks ------------------------------------------------------------------

TEST(Synthetic, TwoBlocksNoNoiseHaveTwoColors) {
  const auto task = make_synthetic({2, 32, 0, 0.4}, 1);
  std::set<std::array<int, 3>> colors;
  for (std::size_t p = 0; p < task.image.pixel_count(); ++p)
    colors.insert({task.image.channel(p, 0), task.image.channel(p, 1), task.image.channel(p, 2)});
  EXPECT_EQ(colors.size(), 2u);
  EXPECT_TRUE(task.ground_truth.fully_labeled());
}

TEST(Synthetic, ClickScribblesHaveOnePixelPerRegion) {
  for (int blocks : {2, 3, 5}) {
    const auto task = make_synthetic({blocks, 24, 5, 0.0}, 2);
    EXPECT_EQ(task.scribbles.labeled_count(), static_cast<std::size_t>(blocks));
  }
}

TEST(Synthetic, ScribblesAgreeWithGroundTruth) {
  const auto task = make_synthetic({4, 32, 20, 0.6}, 3);
  for (std::size_t p : task.scribbles.labeled_pixels()) EXPECT_EQ(task.scribbles.label(p), task.ground_truth.label(p));
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = make_synthetic({3, 20, 15, 0.4}, 7), b = make_synthetic({3, 20, 15, 0.4}, 7);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.scribbles, b.scribbles);
  EXPECT_EQ(a.ground_truth, b.ground_truth);
  EXPECT_FALSE(make_synthetic({3, 20, 15, 0.4}, 8).image == a.image);
}

TEST(Synthetic, DefaultScribblesCoverUnderThreePercent) {
  const auto task = two_blocks(1);
  EXPECT_LE(static_cast<double>(task.scribbles.labeled_count()) / 1024.0, 0.03);
}

TEST(Synthetic, InvalidSpecs) {
  EXPECT_THROW(make_synthetic({5000, 4, 0, 0.4}, 1), std::invalid_argument);
  EXPECT_THROW(make_synthetic({10, 2, 0, 0.4}, 1), std::invalid_argument);
  EXPECT_THROW(make_synthetic({1, 8, 0, 0.4}, 1), std::invalid_argument);
  EXPECT_THROW(make_synthetic({2, 8, 0, 1.5}, 1), std::invalid_argument);
}

TEST(Synthetic, BlockLabelingBeatsPerturbedLabelings) {
  // The block labeling has lower kernel-cut loss than a 10%-flipped copy and
  // than a split at the wrong column.
  const auto task = two_blocks(4);
  const AffinityOperator w(task.image, {});
  LossConfig cfg;
  cfg.gamma = 1000.0;
  const auto gt = std::vector<int>(task.ground_truth.labels().begin(), task.ground_truth.labels().end());
  const double truth = kc_loss(SoftSegmentation::one_hot(gt, 2), w, w, cfg, false).value;
  std::mt19937_64 rng(1);
  std::vector<int> noisy = gt;
  for (int& v : noisy)
    if (rng() % 10 == 0) v = 1 - v;
  EXPECT_LT(truth, kc_loss(SoftSegmentation::one_hot(noisy, 2), w, w, cfg, false).value);
  std::vector<int> shifted(gt.size());
  for (std::size_t p = 0; p < gt.size(); ++p) shifted[p] = (p % 32) < 12 ? 0 : 1;
  EXPECT_LT(truth, kc_loss(SoftSegmentation::one_hot(shifted, 2), w, w, cfg, false).value);
}

// Direct training ---------------------------------------------------------------------

TEST(TrainDirect, ValidatesConfig) {
  const auto task = two_blocks(1, 8);
  const AffinityOperator w(task.image, {});
  auto tc = short_config(LossKind::crf, 10, 5);
  EXPECT_THROW(train_direct(task.scribbles, tc, w, w), std::invalid_argument);
  tc = short_config(LossKind::crf, 0, 5);
  tc.learning_rate = 0.0;
  EXPECT_THROW(train_direct(task.scribbles, tc, w, w), std::invalid_argument);
  EXPECT_THROW(train_direct(PartialLabeling::unlabeled(8, 8, 2), short_config(LossKind::crf, 0, 5), w, w),
               std::invalid_argument);
}

TEST(TrainDirect, LambdaZeroFitsScribblesOnly) {
  const auto task = two_blocks(2, 8);
  const AffinityOperator w(task.image, {});
  auto tc = short_config(LossKind::crf, 0, 1000);
  tc.loss.lambda = 0.0;
  tc.learning_rate = 50.0;
  const auto r = train_direct(task.scribbles, tc, w, w);
  EXPECT_LT(r.trace.records.back().ce, 1e-3);
  const auto init = LogitField::random(64, 2, tc.seed, tc.init_scale).theta();
  for (std::size_t p : task.scribbles.unlabeled_pixels())
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(r.field.theta()(p, k), init(p, k));
}

TEST(TrainDirect, KernelCutSegmentsTwoBlocks) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto task = two_blocks(seed);
    const AffinityOperator w(task.image, {});
    const auto r = train_direct(task.scribbles, TrainConfig{}, w, w, &task.ground_truth);
    ASSERT_TRUE(r.trace.records.back().miou.has_value());
    EXPECT_GE(*r.trace.records.back().miou, 0.95) << "seed " << seed;
  }
}

TEST(TrainDirect, SmallStepsNeverIncreaseTotal) {
  const auto task = two_blocks(5, 12);
  const AffinityOperator w(task.image, {});
  for (LossKind kind : {LossKind::crf, LossKind::kc}) {
    auto tc = short_config(kind, 0, 60);
    tc.learning_rate = 0.01;
    tc.loss.gamma = 10.0;
    const auto r = train_direct(task.scribbles, tc, w, w);
    for (std::size_t i = 1; i < r.trace.records.size(); ++i)
      EXPECT_LE(r.trace.records[i].total, r.trace.records[i - 1].total + 1e-6);
  }
}

TEST(TrainDirect, WarmupOnlyIgnoresRegularizer) {
  const auto task = two_blocks(6, 10);
  const AffinityOperator w(task.image, {});
  auto a = short_config(LossKind::ce, 20, 20);
  auto b = short_config(LossKind::kc, 20, 20);
  b.loss.lambda = 3.0;
  EXPECT_EQ(train_direct(task.scribbles, a, w, w).field.theta(), train_direct(task.scribbles, b, w, w).field.theta());
}

TEST(TrainDirect, GammaZeroKernelCutEqualsCrf) {
  const auto task = two_blocks(7, 10);
  const AffinityOperator w(task.image, {});
  auto kc = short_config(LossKind::kc, 5, 30);
  kc.loss.gamma = 0.0;
  auto crf = short_config(LossKind::crf, 5, 30);
  crf.loss.gamma = 0.0;
  EXPECT_EQ(train_direct(task.scribbles, kc, w, w).trace.to_csv(), train_direct(task.scribbles, crf, w, w).trace.to_csv());
}

TEST(TrainDirect, DeterministicAndThreadIndependent) {
  const auto task = two_blocks(8, 16);
  AffinityOptions threaded;
  threaded.threads = 3;
  const AffinityOperator w1(task.image, {}), w3(task.image, {}, threaded);
  const auto tc = short_config(LossKind::kc, 10, 40);
  const auto a = train_direct(task.scribbles, tc, w1, w1, &task.ground_truth);
  const auto b = train_direct(task.scribbles, tc, w1, w1, &task.ground_truth);
  const auto c = train_direct(task.scribbles, tc, w3, w3, &task.ground_truth);
  EXPECT_EQ(a.trace.to_csv(), b.trace.to_csv());
  EXPECT_EQ(a.trace.to_csv(), c.trace.to_csv());
}

TEST(TrainDirect, TraceCsvSchema) {
  const auto task = two_blocks(9, 8);
  const AffinityOperator w(task.image, {});
  const auto with_gt = train_direct(task.scribbles, short_config(LossKind::crf, 1, 3), w, w, &task.ground_truth);
  const auto csv = with_gt.trace.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,total,ce,reg,miou");
  EXPECT_EQ(with_gt.trace.records.size(), 4u);
  const auto without = train_direct(task.scribbles, short_config(LossKind::crf, 1, 3), w, w).trace.to_csv();
  EXPECT_EQ(without.back(), '\n');
  EXPECT_EQ(without[without.size() - 2], ',');
}

TEST(TrainDirect, DivergenceNamesIteration) {
  const auto task = two_blocks(1, 8);
  const AffinityOperator w(task.image, {});
  auto tc = short_config(LossKind::crf, 0, 10);
  tc.learning_rate = 1e308;
  tc.loss.lambda = 1000.0;
  try {
    train_direct(task.scribbles, tc, w, w);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_GE(e.iteration(), 0);
    EXPECT_LE(e.iteration(), 10);
  }
}

TEST(TrainDirect, UnlabeledImagesAddRegularizer) {
  const auto task = two_blocks(3, 12);
  const auto extra = two_blocks(4, 10);
  const AffinityOperator w(task.image, {}), we(extra.image, {});
  const std::vector<UnlabeledImage> unl{{&we, &we}};
  const auto tc = short_config(LossKind::kc, 2, 10);
  const auto mixed = train_direct(task.scribbles, tc, w, w, nullptr, unl);
  const auto plain = train_direct(task.scribbles, tc, w, w);
  ASSERT_EQ(mixed.unlabeled_fields.size(), 1u);
  EXPECT_EQ(mixed.field.theta(), plain.field.theta());
  EXPECT_GT(mixed.trace.records.back().reg, plain.trace.records.back().reg);
}

// Proposal training -------------------------------------------------------------------

TEST(TrainAdm, RequiresCrf) {
  const auto task = two_blocks(1, 8);
  const AffinityOperator w(task.image, {});
  auto tc = short_config(LossKind::kc, 0, 5);
  tc.mode = TrainMode::adm;
  EXPECT_THROW(train_adm(task.scribbles, tc, w), std::invalid_argument);
}

TEST(TrainAdm, LambdaZeroMatchesDirectFitting) {
  const auto task = two_blocks(2, 10);
  const AffinityOperator w(task.image, {});
  auto tc = short_config(LossKind::crf, 5, 60);
  tc.loss.lambda = 0.0;
  const auto adm = train_adm(task.scribbles, tc, w);
  const auto direct = train_direct(task.scribbles, tc, w, w);
  const auto& a = adm.field.theta();
  const auto& d = direct.field.theta();
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], d.data()[i], 1e-9);
}

TEST(TrainAdm, InnerLoopExtremesGiveFiniteTraces) {
  const auto task = two_blocks(3, 12);
  const AffinityOperator w(task.image, {});
  for (int inner : {1, 50}) {
    auto tc = short_config(LossKind::crf, 5, 60);
    tc.adm_inner_iters = inner;
    const auto r = train_adm(task.scribbles, tc, w, &task.ground_truth);
    EXPECT_EQ(r.trace.records.size(), 61u);
    for (const auto& rec : r.trace.records) {
      EXPECT_TRUE(std::isfinite(rec.total));
      if (rec.iter > 5) {
        ASSERT_TRUE(rec.adm_objective.has_value());
        EXPECT_TRUE(std::isfinite(*rec.adm_objective));
      }
    }
  }
}

TEST(TrainAdm, ConvergedLossNotBelowDirect) {
  const auto task = two_blocks(1);
  const AffinityOperator w(task.image, {});
  TrainConfig tc;
  tc.loss_kind = LossKind::crf;
  const auto direct = train_direct(task.scribbles, tc, w, w, &task.ground_truth);
  const auto adm = train_adm(task.scribbles, tc, w, &task.ground_truth);
  EXPECT_GE(adm.trace.records.back().total, direct.trace.records.back().total);
}

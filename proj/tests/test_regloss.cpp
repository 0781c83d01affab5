#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "rloss/rloss.hpp"

using namespace rloss;

namespace {

Matrix random_soft(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix m(n, k);
  for (std::size_t p = 0; p < n; ++p) {
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += (m(p, c) = u(rng));
    for (std::size_t c = 0; c < k; ++c) m(p, c) /= z;
  }
  return m;
}

std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> l(n);
  for (int& v : l) v = u(rng);
  return l;
}

double total_weight(const AffinityOperator& w) {
  double s = 0.0;
  for (double d : w.degree()) s += d;
  return s;
}

}  // namespace

TEST(LossConfigType, Validation) {
  EXPECT_THROW((LossConfig{-1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{1.0, -1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{1.0, 1.0, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{NAN}.validate()), std::invalid_argument);
  EXPECT_NO_THROW(LossConfig{}.validate());
}

// Partial cross entropy ------------------------------------------------------

TEST(PartialCrossEntropy, ZeroWhenScribblesFit) {
  const PartialLabeling y(2, 2, 3, {0, PartialLabeling::kUnlabeled, 2, 1});
  const auto r = partial_cross_entropy(SoftSegmentation::one_hot(std::vector<int>{0, 1, 2, 1}, 3), y);
  EXPECT_EQ(r.value, 0.0);
}

TEST(PartialCrossEntropy, UniformFourLabels) {
  const PartialLabeling y(1, 1, 4, {2});
  const auto r = partial_cross_entropy(SoftSegmentation::uniform(1, 4), y);
  EXPECT_NEAR(r.value, std::log(4.0), 1e-15);
  EXPECT_NEAR(r.value, 1.3863, 1e-4);
  EXPECT_DOUBLE_EQ((*r.gradient)(0, 2), -4.0);
  EXPECT_EQ((*r.gradient)(0, 0), 0.0);
}

TEST(PartialCrossEntropy, NoScribblesGivesZeroAndZeroGradient) {
  const auto y = PartialLabeling::unlabeled(3, 1, 2);
  const auto r = partial_cross_entropy(SoftSegmentation(random_soft(3, 2, 1)), y);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.gradient->data()) EXPECT_EQ(g, 0.0);
}

TEST(PartialCrossEntropy, LogIsClampedAtEpsilon) {
  const PartialLabeling y(1, 1, 2, {1});
  const auto r = partial_cross_entropy(SoftSegmentation::one_hot(std::vector<int>{0}, 2), y);
  EXPECT_NEAR(r.value, -std::log(1e-9), 1e-9);
  EXPECT_TRUE(std::isfinite((*r.gradient)(0, 1)));
}

// CRF -------------------------------------------------------------------------

TEST(CrfLoss, DiscreteEqualsPottsCut) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto img = oracle::noise_image(8, 8, seed);
    const AffinityOperator w(img, {3.0, 40.0});
    const auto labels = random_labels(64, 3, seed + 7);
    const double cut = oracle::potts_cut(img, labels, 3.0, 40.0);
    const auto s = SoftSegmentation::one_hot(labels, 3);
    EXPECT_NEAR(crf_loss(s, w).value, cut, 1e-9 * cut);
    EXPECT_NEAR(potts_quadratic_relaxation(s, w), 2.0 * cut, 1e-9 * cut);
  }
}

TEST(CrfLoss, SingleLabelIsZero) {
  const AffinityOperator w(oracle::noise_image(5, 5, 1), {});
  const auto s = SoftSegmentation::one_hot(std::vector<int>(25, 1), 2);
  EXPECT_NEAR(crf_loss(s, w).value, 0.0, 1e-12);
}

TEST(CrfLoss, UniformRows) {
  const AffinityOperator w(oracle::noise_image(6, 6, 2), {2.0, 30.0});
  for (std::size_t k = 2; k <= 4; ++k) {
    const double expect = (1.0 - 1.0 / static_cast<double>(k)) * total_weight(w);
    EXPECT_NEAR(crf_loss(SoftSegmentation::uniform(36, k), w).value, expect, 1e-12 * expect);
  }
}

TEST(CrfLoss, MatchesPairwiseOracleOnSoftInput) {
  const auto img = oracle::noise_image(6, 6, 3);
  const AffinityOperator w(img, {2.0, 30.0});
  const auto s = random_soft(36, 3, 4);
  const double want = oracle::crf_value(oracle::dense_w(img, 2.0, 30.0), s);
  EXPECT_NEAR(crf_loss(s, w, {}, false).value, want, 1e-10 * want);
}

TEST(CrfLoss, GradientMatchesFiniteDifferences) {
  for (std::size_t k = 2; k <= 4; ++k) {
    const AffinityOperator w(oracle::noise_image(8, 8, k), {3.0, 40.0});
    const auto s = random_soft(64, k, 10 + k);
    const auto g = crf_loss(s, w, {}, true).gradient.value();
    const auto fd = oracle::central_difference([&](const Matrix& x) { return crf_loss(x, w, {}, false).value; }, s);
    EXPECT_LE(oracle::max_relative_error(g, fd), 1e-4);
  }
}

TEST(CrfLoss, ReducedGradientDiffersByDegreeOnly) {
  const AffinityOperator w(oracle::noise_image(5, 5, 9), {});
  const auto s = random_soft(25, 3, 2);
  LossConfig reduced_cfg;
  reduced_cfg.paper_gradient = true;
  const auto full = crf_loss(s, w, {}, true).gradient.value();
  const auto reduced = crf_loss(s, w, reduced_cfg, true).gradient.value();
  for (std::size_t p = 0; p < 25; ++p)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(full(p, c) - reduced(p, c), w.degree()[p], 1e-12);
}

TEST(CrfLoss, NonNegative) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AffinityOperator w(oracle::noise_image(6, 6, seed), {});
    EXPECT_GE(crf_loss(random_soft(36, 3, seed), w, {}, false).value, 0.0);
  }
}

// Quadratic relaxation ---------------------------------------------------------

TEST(QuadraticRelaxation, ConstantRowsGiveZero) {
  const AffinityOperator w(oracle::noise_image(4, 4, 1), {});
  Matrix m(16, 3);
  for (std::size_t p = 0; p < 16; ++p) {
    m(p, 0) = 0.2;
    m(p, 1) = 0.5;
    m(p, 2) = 0.3;
  }
  EXPECT_EQ(potts_quadratic_relaxation(SoftSegmentation(m), w), 0.0);
}

TEST(QuadraticRelaxation, TwiceCrfOnDiscreteLabelings) {
  const AffinityOperator w(oracle::blocky_image(10, 10, 5), {});
  const auto s = SoftSegmentation::one_hot(random_labels(100, 4, 3), 4);
  const double crf = crf_loss(s, w, {}, false).value;
  EXPECT_NEAR(potts_quadratic_relaxation(s, w), 2.0 * crf, 1e-9 * crf);
}

TEST(QuadraticRelaxation, SizeLimit) {
  const AffinityOperator w(ImageGrid::constant(65, 64, 1, 2, 3), {});
  EXPECT_THROW(potts_quadratic_relaxation(SoftSegmentation::uniform(65 * 64, 2), w), SizeError);
}

// Normalized cut ---------------------------------------------------------------

TEST(NcLoss, UniformRowsGiveKMinusOne) {
  for (std::size_t k = 2; k <= 6; ++k) {
    const AffinityOperator w(oracle::noise_image(7, 5, k), {1.0 + static_cast<double>(k), 10.0 * static_cast<double>(k)});
    EXPECT_NEAR(nc_loss(SoftSegmentation::uniform(35, k), w).value, static_cast<double>(k) - 1.0, 1e-6);
  }
}

TEST(NcLoss, SingleLabelIsZero) {
  const AffinityOperator w(oracle::noise_image(5, 5, 2), {});
  for (std::size_t k = 2; k <= 4; ++k)
    EXPECT_NEAR(nc_loss(SoftSegmentation::one_hot(std::vector<int>(25, 1), k), w).value, 0.0, 1e-9);
}

TEST(NcLoss, MatchesPairwiseOracle) {
  const auto img = oracle::noise_image(6, 6, 17);
  const AffinityOperator w(img, {2.0, 25.0});
  const auto s = random_soft(36, 3, 18);
  const double want = oracle::nc_value(oracle::dense_w(img, 2.0, 25.0), s, 1e-9);
  EXPECT_NEAR(nc_loss(s, w, {}, false).value, want, 1e-10 * want);
}

TEST(NcLoss, GradientMatchesFiniteDifferences) {
  for (std::size_t k = 2; k <= 4; ++k) {
    const AffinityOperator w(oracle::noise_image(8, 8, 40 + k), {3.0, 40.0});
    const auto s = random_soft(64, k, 20 + k);
    const auto g = nc_loss(s, w, {}, true).gradient.value();
    const auto fd = oracle::central_difference([&](const Matrix& x) { return nc_loss(x, w, {}, false).value; }, s);
    EXPECT_LE(oracle::max_relative_error(g, fd), 1e-4);
  }
}

TEST(NcLoss, ReducedGradientGivesSameSoftmaxStep) {
  const AffinityOperator w(oracle::noise_image(6, 6, 4), {});
  const auto s = random_soft(36, 3, 5);
  LossConfig reduced_cfg;
  reduced_cfg.paper_gradient = true;
  const auto a = softmax_backward(s, nc_loss(s, w, {}, true).gradient.value());
  const auto b = softmax_backward(s, nc_loss(s, w, reduced_cfg, true).gradient.value());
  EXPECT_LE(oracle::max_relative_error(a, b, 1e-9), 1e-6);
}

TEST(NcLoss, NonNegative) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AffinityOperator w(oracle::noise_image(6, 6, seed), {});
    EXPECT_GE(nc_loss(random_soft(36, 4, seed), w, {}, false).value, 0.0);
  }
}

// Kernel cut -------------------------------------------------------------------

TEST(KcLoss, GammaZeroEqualsCrf) {
  const AffinityOperator w(oracle::noise_image(6, 6, 1), {});
  const auto s = SoftSegmentation(random_soft(36, 3, 2));
  LossConfig cfg;
  cfg.gamma = 0.0;
  const auto kc = kc_loss(s, w, w, cfg);
  const auto crf = crf_loss(s, w, cfg);
  EXPECT_EQ(kc.value, crf.value);
  EXPECT_EQ(*kc.gradient, *crf.gradient);
}

TEST(KcLoss, UniformRowsCombineClosedForms) {
  const AffinityOperator w(oracle::noise_image(6, 6, 3), {});
  for (std::size_t k = 2; k <= 4; ++k) {
    const double kd = static_cast<double>(k);
    const double expect = (1.0 - 1.0 / kd) * total_weight(w) + (kd - 1.0);
    // The epsilon guard shifts the NC part by about K * eps / assoc.
    EXPECT_NEAR(kc_loss(SoftSegmentation::uniform(36, k), w, w).value, expect, 1e-9 * expect);
  }
}

TEST(KcLoss, IsCrfPlusGammaNc) {
  const AffinityOperator w(oracle::noise_image(6, 6, 5), {});
  const AffinityOperator w_hat(oracle::noise_image(6, 6, 5), {3.0, 12.0, FeatureSpace::xy});
  const auto s = SoftSegmentation(random_soft(36, 3, 6));
  LossConfig cfg;
  cfg.gamma = 2.5;
  const double sum = crf_loss(s, w, cfg).value + 2.5 * nc_loss(s, w_hat, cfg).value;
  EXPECT_NEAR(kc_loss(s, w, w_hat, cfg).value, sum, 1e-12 * sum);
}

TEST(KcLoss, GradientMatchesFiniteDifferences) {
  for (std::size_t k = 2; k <= 4; ++k) {
    const auto img = oracle::noise_image(8, 8, 60 + k);
    const AffinityOperator w(img, {3.0, 40.0});
    const AffinityOperator w_hat(img, {2.0, 12.0, FeatureSpace::xy});
    LossConfig cfg;
    cfg.gamma = 7.0;
    const auto s = random_soft(64, k, 30 + k);
    const auto g = kc_loss(s, w, w_hat, cfg, true).gradient.value();
    const auto fd =
        oracle::central_difference([&](const Matrix& x) { return kc_loss(x, w, w_hat, cfg, false).value; }, s);
    EXPECT_LE(oracle::max_relative_error(g, fd), 1e-4);
  }
}

// Split objective ----------------------------------------------------------------

namespace {

struct SplitCase {
  PartialLabeling y;
  Matrix s;
  Matrix x;
};

/// S and X agree with Y on scribbles; elsewhere both random.
SplitCase split_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> labels(25, PartialLabeling::kUnlabeled);
  for (std::size_t p = 0; p < 25; p += 4) labels[p] = static_cast<int>(p % 3);
  PartialLabeling y(5, 5, 3, labels);
  Matrix s = random_soft(25, 3, seed), x = random_soft(25, 3, seed + 100);
  for (std::size_t p : y.labeled_pixels())
    for (std::size_t c = 0; c < 3; ++c) x(p, c) = static_cast<int>(c) == y.label(p) ? 1.0 : 0.0;
  return {y, s, x};
}

}  // namespace

TEST(AdmObjective, ProposalEqualToOutputLeavesRegularizer) {
  auto c = split_case(1);
  for (std::size_t p : c.y.labeled_pixels())
    for (std::size_t k = 0; k < 3; ++k) c.s(p, k) = c.x(p, k);
  for (std::size_t p : c.y.unlabeled_pixels())
    for (std::size_t k = 0; k < 3; ++k) c.x(p, k) = c.s(p, k);
  const AffinityOperator w(oracle::noise_image(5, 5, 2), {});
  LossConfig cfg;
  cfg.lambda = 0.7;
  const double expect = 0.7 * crf_loss(c.x, w, cfg, false).value;
  EXPECT_NEAR(adm_objective(c.s, c.x, c.y, w, cfg), expect, 1e-12 * expect);
  cfg.lambda = 0.0;
  EXPECT_NEAR(adm_objective(c.s, c.x, c.y, w, cfg), 0.0, 1e-12);
}

TEST(AdmObjective, KlIsCrossEntropyMinusEntropy) {
  const auto c = split_case(3);
  const AffinityOperator w(oracle::noise_image(5, 5, 4), {});
  LossConfig cfg;
  cfg.lambda = 0.3;
  double expect = 0.0;
  for (std::size_t p : c.y.labeled_pixels()) expect -= std::log(c.s(p, static_cast<std::size_t>(c.y.label(p))));
  expect += 0.3 * oracle::crf_value(oracle::dense_w(oracle::noise_image(5, 5, 4), 6.0, 12.0), c.x);
  for (std::size_t p : c.y.unlabeled_pixels())
    for (std::size_t k = 0; k < 3; ++k) expect += -c.x(p, k) * std::log(c.s(p, k)) + c.x(p, k) * std::log(c.x(p, k));
  EXPECT_NEAR(adm_objective(c.s, c.x, c.y, w, cfg), expect, 1e-12 * std::abs(expect));
}

TEST(AdmObjective, RejectsProposalThatIgnoresScribbles) {
  auto c = split_case(5);
  const std::size_t p = c.y.labeled_pixels().front();
  c.x(p, 0) = 0.5;
  c.x(p, 1) = 0.25;
  c.x(p, 2) = 0.25;
  const AffinityOperator w(oracle::noise_image(5, 5, 6), {});
  EXPECT_THROW(adm_objective(c.s, c.x, c.y, w, LossConfig{}), ConstraintError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "avatarfield/errors.hpp"
#include "avatarfield/losses.hpp"
#include "test_support.hpp"

using namespace avatarfield;
using testing_support::random_mat;

TEST(LossWeights, DefaultsMatchPublishedValues) {
  LossWeights w;
  EXPECT_EQ(w.color, 10.0);
  EXPECT_EQ(w.perceptual, 0.5);
  EXPECT_EQ(w.mask, 1e-3);
  EXPECT_EQ(w.normal_omega, 1e-2);
  EXPECT_EQ(w.normal_vertex, 1e-5);
  EXPECT_EQ(w.eikonal, 1e-1);
  EXPECT_EQ(w.bce, 1e-4);
  EXPECT_EQ(w.displacement, 1e-2);
}

TEST(LossWeights, RhoScheduleNeverDecreases) {
  LossWeights w;
  EXPECT_EQ(w.rho(0), 50.0);
  for (int i = 0; i < 5000; i += 7) EXPECT_LE(w.rho(i), w.rho(i + 1));
}

TEST(LossWeights, NegativeWeightIsRejected) {
  LossWeights w;
  w.bce = -1.0;
  EXPECT_THROW(w.validate(), ValidationError);
}

TEST(ColorLoss, IdenticalPatchesCostNothing) {
  std::mt19937_64 rng(1);
  Mat gt = random_mat(rng, 64, 3, 0.0, 1.0);
  PerceptualProxy proxy;
  Tape t;
  EXPECT_EQ(t.scalar_value(color_loss(t, t.constant(gt), gt, 8, LossWeights{}, proxy)), 0.0);
}

TEST(ColorLoss, ConstantOffsetGivesTenthTimesWeight) {
  std::mt19937_64 rng(2);
  Mat gt = random_mat(rng, 64, 3, 0.0, 0.8);
  PerceptualProxy proxy;
  Tape t;
  Var l1;
  (void)color_loss(t, t.constant((gt.array() + 0.1).matrix()), gt, 8, LossWeights{}, proxy, &l1);
  EXPECT_NEAR(t.scalar_value(l1), 1.0, 1e-12);
}

TEST(ColorLoss, PerceptualProxySeesShuffledPixels) {
  std::mt19937_64 rng(3);
  Mat gt = random_mat(rng, 64, 3, 0.0, 1.0);
  std::vector<Eigen::Index> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat shuffled(64, 3);
  for (Eigen::Index r = 0; r < 64; ++r) shuffled.row(r) = gt.row(perm[static_cast<std::size_t>(r)]);
  PerceptualProxy proxy;
  Tape t;
  EXPECT_GT(t.scalar_value(proxy.loss(t, t.constant(shuffled), gt, 8)),
            t.scalar_value(proxy.loss(t, t.constant(gt), gt, 8)));
}

TEST(ColorLoss, ShapeMismatchIsAnError) {
  PerceptualProxy proxy;
  Tape t;
  EXPECT_THROW(color_loss(t, t.constant(Mat::Zero(64, 3)), Mat::Zero(63, 3), 8, LossWeights{}, proxy), ContractError);
}

TEST(ColorLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Mat gt = random_mat(rng, 16, 3, 0.0, 1.0);
  PerceptualProxy proxy;
  ad::ParamStore store(5);
  store.add("p", 16, 3, ad::Init::Uniform, 0.5);
  for (double& v : store.view("p")) v += 0.5;
  LossWeights w;
  w.color = 1e-3;
  w.perceptual = 1e-3;
  testing_support::expect_gradients(store, [&](Tape& t) { return color_loss(t, t.parameter("p"), gt, 4, w, proxy); });
}

TEST(MaskLoss, Examples) {
  Tape t;
  Mat labels = Mat::Ones(4, 1);
  EXPECT_EQ(t.scalar_value(mask_loss(t, t.constant(labels), labels, 1e-3)), 0.0);
  EXPECT_NEAR(t.scalar_value(mask_loss(t, t.constant(Mat::Constant(4, 1, 0.5)), labels, 1e-3)), 1e-3, 1e-18);
  EXPECT_EQ(t.scalar_value(mask_loss(t, ad::zeros(t, 4, 1), Mat::Zero(4, 1), 1e-3)), 0.0);
}

TEST(NormalLoss, PlaneNormalsAreSmooth) {
  Tape t;
  Mat n = Mat::Zero(10, 3);
  n.col(1).setOnes();
  EXPECT_EQ(t.scalar_value(normal_smoothness(t, t.constant(n), t.constant(n))), 0.0);
}

TEST(NormalLoss, SphereMatchesTangentialOffset) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector3d x = random_mat(rng, 3, 1).col(0).normalized();
    Eigen::Vector3d eps = random_mat(rng, 3, 1).col(0).normalized() * 0.01;
    const Eigen::Vector3d n0 = x, n1 = (x + eps).normalized();
    Tape t;
    const double loss = t.scalar_value(
        normal_smoothness(t, t.constant(Mat(n0.transpose())), t.constant(Mat(n1.transpose()))));
    const Eigen::Vector3d tangential = eps - eps.dot(x) * x;
    // |n(x) - n(x + e)|^2 = |e_t|^2 up to third order in |e| at unit radius
    EXPECT_NEAR(loss, tangential.squaredNorm(), 3e-6);
  }
}

TEST(SdfLoss, UnitGradientHasNoEikonalPenalty) {
  std::mt19937_64 rng(7);
  Mat g = random_mat(rng, 20, 3);
  for (Eigen::Index r = 0; r < 20; ++r) g.row(r).normalize();
  Tape t;
  EXPECT_NEAR(t.scalar_value(eikonal_loss(t, t.constant(g))), 0.0, 1e-28);
}

TEST(SdfLoss, ZeroMinimumGivesLogTwoPerRay) {
  Tape t;
  Mat labels(3, 1);
  labels << 0, 1, 1;
  EXPECT_NEAR(t.scalar_value(min_sdf_bce(t, ad::zeros(t, 3, 1), labels, 50.0)), 3 * std::log(2.0), 1e-14);
}

TEST(SdfLoss, DeepInsideForegroundRayIsNearlyFree) {
  Tape t;
  const double rho = 75.0;
  const double v = t.scalar_value(min_sdf_bce(t, t.constant(Mat::Constant(1, 1, -10.0 / rho)), Mat::Ones(1, 1), rho));
  EXPECT_NEAR(v, std::log1p(std::exp(-10.0)), 1e-15);
  EXPECT_LT(v, 1e-4);
}

TEST(DisplacementLoss, Examples) {
  Tape t;
  EXPECT_EQ(t.scalar_value(displacement_loss(t, {ad::zeros(t, 5, 3)})), 0.0);
  Mat d(1, 3);
  d << 3, 4, 0;
  const Var one = t.constant(d);
  EXPECT_NEAR(1e-2 * t.scalar_value(displacement_loss(t, {one})), 1e-2 * 5.0, 1e-15);
  std::mt19937_64 rng(8);
  Mat a = random_mat(rng, 6, 3), b = random_mat(rng, 4, 3);
  const double base = t.scalar_value(displacement_loss(t, {t.constant(a), t.constant(b)}));
  const double scaled = t.scalar_value(displacement_loss(t, {t.constant(2.5 * a), t.constant(2.5 * b)}));
  EXPECT_NEAR(scaled, 2.5 * base, 1e-12);
}

TEST(LossReport, TotalIsTheSumOfTerms) {
  LossReport r;
  r.color = 1;
  r.perceptual = 2;
  r.mask = 3;
  r.normal_omega = 4;
  r.normal_vertex = 5;
  r.eikonal = 6;
  r.bce = 7;
  r.displacement = 8;
  EXPECT_EQ(r.sum(), 36.0);
  r.total = r.sum();
  EXPECT_TRUE(r.finite());
  r.bce = std::nan("");
  EXPECT_FALSE(r.finite());
  EXPECT_EQ(r.to_json()["mask"], 3.0);
}

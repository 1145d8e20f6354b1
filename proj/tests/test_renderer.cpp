#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "avatarfield/errors.hpp"
#include "avatarfield/renderer.hpp"
#include "test_support.hpp"

using namespace avatarfield;
using testing_support::Projection;

namespace {

Box unit_box() { return {Eigen::Vector3d::Constant(-0.5), Eigen::Vector3d::Constant(0.5)}; }

RayLayout single_ray(const std::vector<double>& depths, double near, double far) {
  RayLayout l;
  l.rays = 1;
  l.samples = static_cast<int>(depths.size());
  for (std::size_t k = 0; k < depths.size(); ++k) l.index.push_back(static_cast<std::int32_t>(k));
  l.delta = segment_lengths(depths, near, far);
  return l;
}

using Field = std::function<double(double)>;
using ColorField = std::function<Eigen::Vector3d(double)>;

// Continuous volume rendering integral by the midpoint rule.
Eigen::Vector4d quadrature(const Field& sigma, const ColorField& color, double near, double far, int n) {
  const double dt = (far - near) / n;
  double optical = 0.0;
  Eigen::Vector4d out = Eigen::Vector4d::Zero();
  for (int k = 0; k < n; ++k) {
    const double t = near + (k + 0.5) * dt;
    const double s = sigma(t);
    // transmittance at the midpoint, then the segment's absorbed share
    const double T = std::exp(-(optical + 0.5 * s * dt));
    out.head<3>() += T * s * dt * color(t);
    out[3] += T * s * dt;
    optical += s * dt;
  }
  return out;
}

// Coarse stratified + fine importance samples, composited.
Eigen::Vector4d sampled(const Field& sigma, const ColorField& color, double near, double far, int coarse, int fine,
                        std::mt19937_64& rng) {
  std::vector<double> depths = stratified_coarse(near, far, coarse, &rng);
  Mat s(coarse, 1);
  for (int k = 0; k < coarse; ++k) s(k, 0) = sigma(depths[static_cast<std::size_t>(k)]);
  if (fine > 0) {
    std::vector<double> w = composite_weights(s, single_ray(depths, near, far));
    std::vector<double> extra = importance_fine(near, far, w, fine, &rng);
    depths.insert(depths.end(), extra.begin(), extra.end());
    std::sort(depths.begin(), depths.end());
  }
  const auto S = static_cast<Eigen::Index>(depths.size());
  Mat sv(S, 1), cv(S, 3);
  for (Eigen::Index k = 0; k < S; ++k) {
    sv(k, 0) = sigma(depths[static_cast<std::size_t>(k)]);
    cv.row(k) = color(depths[static_cast<std::size_t>(k)]).transpose();
  }
  Tape t;
  Mat out = t.value(composite(t, t.constant(sv), t.constant(cv), single_ray(depths, near, far)));
  return out.row(0).transpose();
}

Eigen::Vector3d smooth_color(double t) { return {0.5 + 0.4 * std::sin(3 * t), 0.3 + 0.2 * std::cos(2 * t), 0.7}; }

}  // namespace

TEST(Rays, CenterRayHitsBox) {
  Camera cam = Camera::look_at({0, 0, -3}, {0, 0, 0}, {0, 1, 0}, 30.0, 33, 33);
  auto rays = generate_patch_rays(cam, 16, 16, 1, unit_box());
  ASSERT_EQ(rays.size(), 1u);
  EXPECT_TRUE(rays[0].hit);
  EXPECT_NEAR(rays[0].near, 2.5, 1e-12);
  EXPECT_NEAR(rays[0].far, 3.5, 1e-12);
}

TEST(Rays, ParallelRayOutsideSlabMisses) {
  double n = 0, f = 0;
  EXPECT_FALSE(intersect_box({0.0, 0.7, -3.0}, {0, 0, 1}, unit_box(), n, f));
  EXPECT_TRUE(intersect_box({0.0, 0.3, -3.0}, {0, 0, 1}, unit_box(), n, f));
}

TEST(Rays, PatchOf32Gives1024Rays) {
  Camera cam = Camera::look_at({0, 0, -3}, {0, 0, 0}, {0, 1, 0}, 30.0, 64, 64);
  EXPECT_EQ(generate_patch_rays(cam, 10, 20, 32, unit_box()).size(), 1024u);
  EXPECT_THROW(generate_patch_rays(cam, 40, 0, 32, unit_box()), ContractError);
}

TEST(Stratified, ZeroJitterGivesBinMidpoints) {
  auto t = stratified_coarse(1.0, 3.0, 4, nullptr);
  EXPECT_EQ(t, (std::vector<double>{1.25, 1.75, 2.25, 2.75}));
}

TEST(Stratified, JitteredDepthsAscendWithinRange) {
  std::mt19937_64 rng(1);
  auto t = stratified_coarse(0.5, 2.0, 64, &rng);
  ASSERT_EQ(t.size(), 64u);
  EXPECT_GE(t.front(), 0.5);
  EXPECT_LE(t.back(), 2.0);
  EXPECT_TRUE(std::is_sorted(t.begin(), t.end()));
}

TEST(Importance, SingleNonzeroBinCapturesEverySample) {
  std::vector<double> w(64, 0.0);
  w[20] = 0.3;
  std::mt19937_64 rng(2);
  auto t = importance_fine(0.0, 64.0, w, 16, &rng);
  ASSERT_EQ(t.size(), 16u);
  for (double v : t) {
    EXPECT_GE(v, 20.0);
    EXPECT_LE(v, 21.0);
  }
}

TEST(Importance, UniformWeightsPassKolmogorovSmirnov) {
  std::vector<double> w(64, 1.0);
  std::mt19937_64 rng(3);
  const int n = 2000;
  auto t = importance_fine(0.0, 1.0, w, n, &rng);
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = t[static_cast<std::size_t>(i)];
    d = std::max({d, std::abs((i + 1.0) / n - x), std::abs(x - static_cast<double>(i) / n)});
  }
  EXPECT_LT(d, 1.36 / std::sqrt(static_cast<double>(n)));
}

TEST(Importance, MergedListHasEightySortedDepths) {
  std::mt19937_64 rng(4);
  auto coarse = stratified_coarse(2.0, 4.0, 64, &rng);
  std::vector<double> w(64);
  for (std::size_t k = 0; k < 64; ++k) w[k] = std::exp(-std::pow((coarse[k] - 3.0) / 0.2, 2));
  auto fine = importance_fine(2.0, 4.0, w, 16, &rng);
  coarse.insert(coarse.end(), fine.begin(), fine.end());
  std::sort(coarse.begin(), coarse.end());
  EXPECT_EQ(coarse.size(), 80u);
  EXPECT_TRUE(std::is_sorted(coarse.begin(), coarse.end()));
}

TEST(Importance, AllZeroWeightsFallBackToStratified) {
  std::vector<double> w(8, 0.0);
  EXPECT_EQ(importance_fine(0.0, 1.0, w, 4, nullptr), stratified_coarse(0.0, 1.0, 4, nullptr));
}

TEST(Composite, OpaqueFirstSampleTakesItsColor) {
  Mat s(3, 1), c(3, 3);
  s << 1e6, 1.0, 1.0;
  c << 0.2, 0.4, 0.6, 1, 1, 1, 1, 1, 1;
  Tape t;
  Mat out = t.value(composite(t, t.constant(s), t.constant(c), single_ray({0.0, 0.5, 1.0}, 0.0, 1.5)));
  EXPECT_NEAR(out(0, 0), 0.2, 1e-12);
  EXPECT_NEAR(out(0, 1), 0.4, 1e-12);
  EXPECT_NEAR(out(0, 2), 0.6, 1e-12);
  EXPECT_NEAR(out(0, 3), 1.0, 1e-12);
}

TEST(Composite, EmptySpaceIsBlackAndTransparent) {
  Tape t;
  Mat out = t.value(composite(t, ad::zeros(t, 4, 1), t.constant(Mat::Ones(4, 3)), single_ray({0, 1, 2, 3}, 0, 4)));
  EXPECT_EQ(out, Mat::Zero(1, 4));
}

TEST(Composite, ConstantDensityMatchesClosedFormAndQuadrature) {
  const double sigma = 1.7, near = 0.3, far = 2.1;
  std::mt19937_64 rng(5);
  Eigen::Vector4d s = sampled([&](double) { return sigma; }, smooth_color, near, far, 64, 16, rng);
  Eigen::Vector4d q = quadrature([&](double) { return sigma; }, smooth_color, near, far, 10000);
  EXPECT_NEAR(s[3], 1.0 - std::exp(-sigma * (far - near)), 1e-12);
  EXPECT_NEAR(q[3], 1.0 - std::exp(-sigma * (far - near)), 1e-7);
  EXPECT_LE((s - q).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Composite, GaussianDensityMatchesQuadrature) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto sigma = [](double t) { return 8.0 * std::exp(-0.5 * std::pow((t - 1.2) / 0.15, 2)); };
    Eigen::Vector4d s = sampled(sigma, smooth_color, 0.2, 2.2, 64, 16, rng);
    Eigen::Vector4d q = quadrature(sigma, smooth_color, 0.2, 2.2, 10000);
    EXPECT_LE((s - q).cwiseAbs().maxCoeff(), 1e-3) << "seed " << seed;
  }
}

TEST(Composite, MaskBoundedAndColorBelowMaskTimesMax) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Mat s = testing_support::random_mat(rng, 10, 1, 0.0, 20.0);
    Mat c = testing_support::random_mat(rng, 10, 3, 0.0, 1.0);
    std::vector<double> d(10);
    for (int k = 0; k < 10; ++k) d[static_cast<std::size_t>(k)] = 0.1 * k;
    Tape t;
    Mat out = t.value(composite(t, t.constant(s), t.constant(c), single_ray(d, 0.0, 1.0)));
    EXPECT_GE(out(0, 3), 0.0);
    EXPECT_LE(out(0, 3), 1.0);
    for (int ch = 0; ch < 3; ++ch) EXPECT_LE(out(0, ch), out(0, 3) * c.col(ch).maxCoeff() + 1e-12);
  }
}

TEST(Composite, MoreSamplesNeverIncreaseError) {
  auto sigma = [](double t) { return 3.0 * std::exp(-0.5 * std::pow((t - 1.0) / 0.3, 2)); };
  const Eigen::Vector4d q = quadrature(sigma, smooth_color, 0.0, 2.0, 10000);
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    double prev = 1e9;
    for (int n : {8, 16, 32, 64, 128}) {
      // midpoint sampling: the deterministic mode of the stratified sampler
      std::vector<double> d = stratified_coarse(0.0, 2.0, n, nullptr);
      Mat sv(n, 1), cv(n, 3);
      for (int k = 0; k < n; ++k) {
        sv(k, 0) = sigma(d[static_cast<std::size_t>(k)]);
        cv.row(k) = smooth_color(d[static_cast<std::size_t>(k)]).transpose();
      }
      Tape t;
      Mat out = t.value(composite(t, t.constant(sv), t.constant(cv), single_ray(d, 0.0, 2.0)));
      const double err = (out.row(0).transpose() - q).cwiseAbs().maxCoeff();
      EXPECT_LE(err, prev) << "n " << n;
      prev = err;
    }
  }
}

TEST(Composite, GradientMatchesFiniteDifferences) {
  ad::ParamStore store(7);
  store.add("s", 6, 1, ad::Init::Uniform, 2.0);
  for (double& v : store.view("s")) v += 2.5;
  store.add("c", 6, 3, ad::Init::Uniform, 1.0);
  RayLayout layout;
  layout.rays = 2;
  layout.samples = 3;
  layout.index = {0, 1, 2, 5, 4, 3};
  layout.delta = {0.1, 0.2, 0.3, 0.15, 0.25, 0.05};
  Projection p1(8), p2(9);
  testing_support::expect_gradients(store, [&](Tape& t) {
    const Var s = t.parameter("s");
    return ad::add(t, p1(t, composite(t, s, t.parameter("c"), layout)), p2(t, composite_mask(t, s, layout)));
  });
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "avatarfield/encodings.hpp"
#include "avatarfield/errors.hpp"
#include "test_support.hpp"

using namespace avatarfield;
using testing_support::Projection;
using testing_support::random_mat;

TEST(Fourier, ZeroInputGivesSinZeroCosOne) {
  Mat x = Mat::Zero(1, 1);
  Mat f = fourier_features(x, {2, false});
  ASSERT_EQ(f.cols(), 4);
  EXPECT_DOUBLE_EQ(f(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(f(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(f(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(f(0, 3), 1.0);
}

TEST(Fourier, HalfPeriodAtOne) {
  Mat x = Mat::Ones(1, 1);
  Mat f = fourier_features(x, {1, false});
  EXPECT_NEAR(f(0, 0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(f(0, 1), -1.0);
}

TEST(Fourier, WidthForThreeVector) {
  Mat x = Mat::Zero(2, 3);
  EXPECT_EQ(fourier_features(x, {6, false}).cols(), 36);
  EXPECT_EQ(fourier_features(x, {6, true}).cols(), 39);
}

TEST(Fourier, BoundedForArbitraryInputs) {
  std::mt19937_64 rng(11);
  Mat x = random_mat(rng, 200, 3, -1e3, 1e3);
  Mat f = fourier_features(x, {6, false});
  EXPECT_LE(f.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Fourier, GradientMatchesFiniteDifferences) {
  ad::ParamStore store(4);
  store.add("x", 5, 3, ad::Init::Uniform, 1.0);
  Projection proj(1);
  testing_support::expect_gradients(store, [&](Tape& t) {
    return proj(t, fourier_encode(t, t.parameter("x"), {4, true}));
  });
}

namespace {

HashGridConfig small_grid() {
  HashGridConfig c;
  c.levels = 3;
  c.log2_table_size = 6;
  c.features_per_level = 2;
  c.base_resolution = 2;
  c.per_level_scale = 2.0;
  return c;
}

Mat encode_values(ad::ParamStore& store, const HashGrid& g, const Mat& u) {
  Tape t(&store);
  return t.value(g.encode(t, t.constant(u)));
}

}  // namespace

TEST(HashGrid, OutputWidthIsLevelsTimesFeatures) {
  HashGridConfig c;
  EXPECT_EQ(c.output_width(), 16);
  ad::ParamStore store(1);
  HashGrid g(c, "grid");
  g.allocate(store);
  EXPECT_EQ(encode_values(store, g, Mat::Constant(3, 3, 0.3)).cols(), 16);
}

TEST(HashGrid, GridVertexReturnsStoredFeature) {
  ad::ParamStore store(2);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 1.0);
  // (0.5, 0.25, 0.75) is a vertex of the levels with resolution 4 and 8.
  Mat u(1, 3);
  u << 0.5, 0.25, 0.75;
  Mat out = encode_values(store, g, u);
  auto table = store.view("grid");
  const auto T = g.config().table_size();
  for (int l = 1; l < 3; ++l) {
    const int r = g.config().resolution(l);
    const auto row = l * T + g.vertex_index(l, r / 2, r / 4, 3 * r / 4);
    for (int f = 0; f < 2; ++f) EXPECT_NEAR(out(0, l * 2 + f), table[static_cast<std::size_t>(row * 2 + f)], 1e-15);
  }
}

TEST(HashGrid, EdgeMidpointAveragesTwoCorners) {
  ad::ParamStore store(3);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 1.0);
  const int l = 2;
  const int r = g.config().resolution(l);
  // midpoint of the x edge between vertices (1,2,3) and (2,2,3)
  Mat u(1, 3);
  u << 1.5 / r, 2.0 / r, 3.0 / r;
  Mat out = encode_values(store, g, u);
  auto table = store.view("grid");
  const auto T = g.config().table_size();
  const auto a = l * T + g.vertex_index(l, 1, 2, 3);
  const auto b = l * T + g.vertex_index(l, 2, 2, 3);
  for (int f = 0; f < 2; ++f) {
    const double expect = 0.5 * (table[static_cast<std::size_t>(a * 2 + f)] + table[static_cast<std::size_t>(b * 2 + f)]);
    EXPECT_NEAR(out(0, l * 2 + f), expect, 1e-14);
  }
}

TEST(HashGrid, HashIsDeterministicAndInRange) {
  HashGrid g(HashGridConfig{}, "grid");
  const int l = 7;
  for (std::int64_t i = 0; i < 50; ++i) {
    const auto a = g.vertex_index(l, i, 2 * i, 3 * i);
    EXPECT_EQ(a, g.vertex_index(l, i, 2 * i, 3 * i));
    EXPECT_GE(a, 0);
    EXPECT_LT(a, g.config().table_size());
  }
}

TEST(HashGrid, ContinuousUnderTinyPerturbations) {
  ad::ParamStore store(5);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 1.0);
  std::mt19937_64 rng(6);
  // Lipschitz bound per level: |dF/du| <= 2 * 3 * res * max|table| (gradient of trilinear weights).
  double maxabs = 0.0;
  for (double v : store.view("grid")) maxabs = std::max(maxabs, std::abs(v));
  double lip = 0.0;
  for (int l = 0; l < 3; ++l) lip += 2.0 * 3.0 * g.config().resolution(l) * maxabs;
  for (int trial = 0; trial < 200; ++trial) {
    Mat u = random_mat(rng, 1, 3, 0.0, 1.0);
    Mat e = random_mat(rng, 1, 3, -1e-6 / std::sqrt(3.0), 1e-6 / std::sqrt(3.0));
    Mat v = (u + e).cwiseMax(0.0).cwiseMin(1.0);
    const double change = (encode_values(store, g, u) - encode_values(store, g, v)).norm();
    EXPECT_LE(change, lip * (v - u).norm() + 1e-15);
  }
}

TEST(HashGrid, EncodeGradientMatchesFiniteDifferences) {
  ad::ParamStore store(7);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 0.5);
  store.add("u", 6, 3, ad::Init::Uniform, 0.4);
  for (double& v : store.view("u")) v += 0.5;
  Projection proj(2);
  testing_support::expect_gradients(store, [&](Tape& t) { return proj(t, g.encode(t, t.parameter("u"))); });
}

TEST(HashGrid, JacobianMatchesFiniteDifferencesOfEncode) {
  ad::ParamStore store(8);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 0.5);
  std::mt19937_64 rng(9);
  Mat u = random_mat(rng, 4, 3, 0.05, 0.95);
  Tape t(&store);
  Mat jac = t.value(g.jacobian(t, t.constant(u)));
  const double h = 1e-7;
  for (int d = 0; d < 3; ++d) {
    Mat up = u, dn = u;
    up.col(d).array() += h;
    dn.col(d).array() -= h;
    Mat fd = (encode_values(store, g, up) - encode_values(store, g, dn)) / (2 * h);
    EXPECT_LE((fd - jac.middleRows(d * 4, 4)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(HashGrid, JacobianGradientMatchesFiniteDifferences) {
  ad::ParamStore store(10);
  HashGrid g(small_grid(), "grid");
  g.allocate(store, 0.5);
  store.add("u", 5, 3, ad::Init::Uniform, 0.4);
  for (double& v : store.view("u")) v += 0.5;
  Projection proj(3);
  testing_support::expect_gradients(store, [&](Tape& t) { return proj(t, g.jacobian(t, t.parameter("u"))); });
}

namespace {

Camera axis_camera() {
  // camera at the origin looking down +z
  Camera c;
  c.K << 100, 0, 31.5, 0, 100, 31.5, 0, 0, 1;
  c.width = c.height = 64;
  return c;
}

}  // namespace

TEST(KeypointEncoding, CoincidentJointHasUnitWeightAndZeroDelta) {
  Camera cam = axis_camera();
  Mat joints(2, 3);
  joints << 0.1, 0.2, 2.0, 5.0, 5.0, 9.0;
  Mat x = joints.topRows(1);
  Tape t;
  Mat out = t.value(keypoint_encode(t, t.constant(x), joints, cam, {0.1, 6}));
  ASSERT_EQ(out.cols(), 2 * 12);
  for (int l = 0; l < 6; ++l) {
    EXPECT_DOUBLE_EQ(out(0, 2 * l), 0.0);
    EXPECT_DOUBLE_EQ(out(0, 2 * l + 1), 1.0);
  }
}

TEST(KeypointEncoding, DistantJointIsNumericallyZero) {
  Camera cam = axis_camera();
  Mat joints(1, 3);
  joints << 1.0, 0.0, 2.0;
  Mat x(1, 3);
  x << 0.0, 0.0, 2.0;
  Tape t;
  Mat out = t.value(keypoint_encode(t, t.constant(x), joints, cam, {0.1, 6}));
  EXPECT_LE(out.cwiseAbs().maxCoeff(), std::exp(-50.0) * 1.0000001);
}

TEST(KeypointEncoding, DeltaIsDepthDifference) {
  Camera cam = axis_camera();
  Mat joints(1, 3);
  joints << 0.0, 0.0, 2.0;
  Mat x(1, 3);
  x << 0.0, 0.0, 1.5;
  Tape t;
  const KeypointEncodingConfig cfg{10.0, 1};
  Mat out = t.value(keypoint_encode(t, t.constant(x), joints, cam, cfg));
  const double w = std::exp(-0.25 / (2 * 100.0));
  EXPECT_NEAR(out(0, 0), w * std::sin(std::numbers::pi * 0.5), 1e-15);
  EXPECT_NEAR(out(0, 1), w * std::cos(std::numbers::pi * 0.5), 1e-15);
}

TEST(KeypointEncoding, PointBehindCameraThrows) {
  Camera cam = axis_camera();
  Mat joints = Mat::Zero(1, 3);
  Mat x(1, 3);
  x << 0.0, 0.0, -1.0;
  Tape t;
  EXPECT_THROW(keypoint_encode(t, t.constant(x), joints, cam, {}), DegenerateError);
}

TEST(KeypointEncoding, EquivariantToJointReindexing) {
  Camera cam = axis_camera();
  std::mt19937_64 rng(12);
  Mat joints = random_mat(rng, 4, 3, -0.2, 0.2);
  joints.col(2).array() += 2.0;
  Mat x = random_mat(rng, 3, 3, -0.2, 0.2);
  x.col(2).array() += 2.0;
  const std::vector<int> perm{2, 0, 3, 1};
  Mat permuted(4, 3);
  for (int k = 0; k < 4; ++k) permuted.row(k) = joints.row(perm[static_cast<std::size_t>(k)]);
  Tape t;
  Mat a = t.value(keypoint_encode(t, t.constant(x), joints, cam, {}));
  Mat b = t.value(keypoint_encode(t, t.constant(x), permuted, cam, {}));
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(b.middleCols(k * 12, 12), a.middleCols(perm[static_cast<std::size_t>(k)] * 12, 12));
  }
}

TEST(KeypointEncoding, GradientMatchesFiniteDifferences) {
  Camera cam = Camera::look_at({0.3, 0.2, -2.5}, {0, 0, 0}, {0, 1, 0}, 100, 64, 64);
  std::mt19937_64 rng(13);
  Mat joints = random_mat(rng, 3, 3, -0.15, 0.15);
  ad::ParamStore store(14);
  store.add("x", 4, 3, ad::Init::Uniform, 0.15);
  Projection proj(4);
  testing_support::expect_gradients(store, [&](Tape& t) {
    return proj(t, keypoint_encode(t, t.parameter("x"), joints, cam, {0.1, 3}));
  });
}

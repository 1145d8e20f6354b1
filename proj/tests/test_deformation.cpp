#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "avatarfield/deformation.hpp"
#include "avatarfield/errors.hpp"
#include "test_support.hpp"

using namespace avatarfield;
using testing_support::Projection;
using testing_support::random_mat;

namespace {

using Beta = Eigen::Matrix<double, kShapeDims, 1>;

Eigen::Matrix4d rigid(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

BoneSet two_bones(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  BoneSet b;
  for (int i = 0; i < 2; ++i) {
    b.transforms.push_back(rigid(axis_angle({u(rng), u(rng), u(rng)}), {u(rng), u(rng), u(rng)}));
  }
  b.transforms.push_back(Eigen::Matrix4d::Identity());
  return b;
}

BodyParams random_pose(const BodyModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  BodyParams p = m.canonical_params(Beta::Zero());
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta.data()[i] += u(rng);
  p.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return p;
}

}  // namespace

TEST(BackwardSkin, CanonicalPoseIsIdentity) {
  BodyModel m;
  PosedBody b = m.canonical(Beta::Zero());
  Mat w = skinning_weights(nearest_vertices(b.vertices, b.vertices), b, 0.1);
  Mat x_c = inverse_blend(b.vertices, w, BoneSet::from_body(b));
  EXPECT_LE((x_c - b.vertices).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BackwardSkin, TranslatedBoneSubtractsTranslation) {
  BoneSet b;
  b.transforms = {rigid(Eigen::Matrix3d::Identity(), {0.3, -0.2, 0.5}), Eigen::Matrix4d::Identity()};
  Mat x(1, 3);
  x << 1.0, 2.0, 3.0;
  Mat w(1, 2);
  w << 1.0, 0.0;
  Mat x_c = inverse_blend(x, w, b);
  EXPECT_NEAR(x_c(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(x_c(0, 1), 2.2, 1e-15);
  EXPECT_NEAR(x_c(0, 2), 2.5, 1e-15);
}

TEST(BackwardSkin, TwoBoneBlendMatchesExplicitInverse) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    BoneSet b = two_bones(rng);
    const double a = u(rng);
    Mat w(1, 3);
    w << a, 1.0 - a, 0.0;
    Mat x = random_mat(rng, 1, 3);
    const Eigen::Matrix4d M = a * b.transforms[0] + (1.0 - a) * b.transforms[1];
    const Eigen::Vector4d expect = M.inverse() * x.row(0).transpose().homogeneous();
    Mat x_c = inverse_blend(x, w, b);
    EXPECT_LE((x_c.row(0).transpose() - expect.head<3>()).norm(), 1e-12);
  }
}

TEST(BackwardSkin, OpposedBonesAreDegenerate) {
  BoneSet b;
  b.transforms = {Eigen::Matrix4d::Identity(), rigid(axis_angle({0, 0, std::numbers::pi}), {0, 0, 0}),
                  Eigen::Matrix4d::Identity()};
  Mat w(1, 3);
  w << 0.5, 0.5, 0.0;
  EXPECT_THROW(inverse_blend(Mat::Ones(1, 3), w, b), DegenerateError);
}

TEST(ForwardWeights, ZeroLogitsGiveNormalizedFlooredPrior) {
  Mat prior(1, 3);
  prior << 0.7, 0.3, 0.0;
  Tape t;
  Mat w = t.value(forward_weights(t, ad::zeros(t, 1, 3), prior, 1e-6));
  const double z = 1.0 + 1e-6;
  EXPECT_NEAR(w(0, 0), 0.7 / z, 1e-15);
  EXPECT_NEAR(w(0, 1), 0.3 / z, 1e-15);
  EXPECT_NEAR(w(0, 2), 1e-6 / z, 1e-15);
}

TEST(ForwardWeights, ConstantShiftLeavesWeightsUnchanged) {
  std::mt19937_64 rng(32);
  Mat logits = random_mat(rng, 4, 9);
  Mat prior = random_mat(rng, 4, 9, 0.0, 1.0);
  Tape t;
  Mat a = t.value(forward_weights(t, t.constant(logits), prior));
  Mat b = t.value(forward_weights(t, t.constant((logits.array() + 3.7).matrix()), prior));
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ForwardWeights, BackgroundPriorStaysBackground) {
  Mat prior = Mat::Zero(1, 9);
  prior(0, 8) = 1.0;
  Tape t;
  Mat w = t.value(forward_weights(t, ad::zeros(t, 1, 9), prior));
  EXPECT_NEAR(w(0, 8), 1.0, 1e-8);
}

TEST(ForwardWeights, AlwaysOnSimplex) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    Mat logits = random_mat(rng, 10, 9, -20.0, 20.0);
    Mat prior = random_mat(rng, 10, 9, 0.0, 1.0);
    Tape t;
    Mat w = t.value(forward_weights(t, t.constant(logits), prior));
    EXPECT_GE(w.minCoeff(), 0.0);
    for (Eigen::Index n = 0; n < w.rows(); ++n) EXPECT_NEAR(w.row(n).sum(), 1.0, 1e-9);
  }
}

TEST(ForwardSkin, CanonicalPoseIsIdentity) {
  BodyModel m;
  PosedBody c = m.canonical(Beta::Zero());
  std::mt19937_64 rng(34);
  Mat x = random_mat(rng, 10, 3);
  Mat w = random_mat(rng, 10, 9, 0.0, 1.0);
  for (Eigen::Index n = 0; n < 10; ++n) w.row(n) /= w.row(n).sum();
  Tape t;
  Mat x_o = t.value(forward_skin(t, t.constant(w), t.constant(x), ad::zeros(t, 10, 3), BoneSet::from_body(c)));
  EXPECT_LE((x_o - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ForwardSkin, OneHotVertexFollowsItsBone) {
  BodyModel m;
  std::mt19937_64 rng(35);
  PosedBody c = m.canonical(Beta::Zero());
  PosedBody b = m.pose(random_pose(m, rng));
  for (int v = 0; v < m.vertex_count(); ++v) {
    const int bone = c.vertex_bone[static_cast<std::size_t>(v)];
    if (c.weights(v, bone) != 1.0) continue;
    Mat w = Mat::Zero(1, m.joints() + 1);
    w(0, bone) = 1.0;
    Tape t;
    Mat x_o = t.value(forward_skin(t, t.constant(w), t.constant(c.vertices.row(v)), ad::zeros(t, 1, 3),
                                   BoneSet::from_body(b)));
    EXPECT_LE((x_o.row(0) - b.vertices.row(v)).norm(), 1e-12);
  }
}

TEST(ForwardSkin, SurfaceRoundTripRecoversPosedVertices) {
  BodyModel m;
  std::mt19937_64 rng(36);
  PosedBody c = m.canonical(Beta::Zero());
  DeformationField field(DeformationConfig{}, m.joints(), 16);
  ad::ParamStore store(1);
  field.allocate(store);
  for (int trial = 0; trial < 5; ++trial) {
    BodyParams p = random_pose(m, rng);
    PosedBody b = m.pose(p);
    const BoneSet bones = BoneSet::from_body(b);
    Tape t(&store);
    const Var identity = ad::zeros(t, 1, 16);
    const Mat pose = pose_features(p.theta);
    Mat w_b = skinning_weights(nearest_vertices(b.vertices, b.vertices), b, 0.1);
    const Var d_t = field.displacement(t, t.constant(b.vertices), identity, pose);
    Mat x_c = inverse_blend(b.vertices, w_b, bones) - t.value(d_t);
    Mat w_init = skinning_weights(nearest_vertices(x_c, c.vertices), c, 0.1);
    const Var hash = ad::zeros(t, x_c.rows(), 16);
    const Var w_f = forward_weights(t, field.weight_logits(t, hash, identity), w_init);
    const Var d_o = field.displacement(t, t.constant(x_c), identity, pose);
    Mat x_o = t.value(forward_skin(t, w_f, t.constant(x_c), d_o, bones));
    EXPECT_LE((x_o - b.vertices).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(TransportNormal, IdentityPoseKeepsNormal) {
  BodyModel m;
  BoneSet bones = BoneSet::from_body(m.canonical(Beta::Zero()));
  std::mt19937_64 rng(37);
  Mat n = random_mat(rng, 5, 3);
  for (Eigen::Index r = 0; r < 5; ++r) n.row(r).normalize();
  Mat w = random_mat(rng, 5, 9, 0.0, 1.0);
  Tape t;
  Mat out = t.value(transport_normal(t, t.constant(w), t.constant(n), bones));
  EXPECT_LE((out - n).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TransportNormal, QuarterTurnAboutZ) {
  BoneSet b;
  b.transforms = {rigid(axis_angle({0, 0, std::numbers::pi / 2}), {1, 2, 3}), Eigen::Matrix4d::Identity()};
  Mat w(1, 2);
  w << 1.0, 0.0;
  Mat n(1, 3);
  n << 1.0, 0.0, 0.0;
  Tape t;
  Mat out = t.value(transport_normal(t, t.constant(w), t.constant(n), b));
  EXPECT_NEAR(out(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(out(0, 2), 0.0, 1e-15);
}

TEST(TransportNormal, OpposedRotationsAverageInTheirPlane) {
  // +-60 degrees about z applied to (1,0,0): average is (cos 60, 0, 0), normalized (1,0,0)
  const double a = std::numbers::pi / 3;
  BoneSet b;
  b.transforms = {rigid(axis_angle({0, 0, a}), {0, 0, 0}), rigid(axis_angle({0, 0, -a}), {0, 0, 0}),
                  Eigen::Matrix4d::Identity()};
  Mat w(1, 3);
  w << 0.5, 0.5, 0.0;
  Mat n(1, 3);
  n << 1.0, 0.0, 0.0;
  Tape t;
  Mat out = t.value(transport_normal(t, t.constant(w), t.constant(n), b));
  EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out.row(0).tail(2).norm(), 0.0, 1e-15);
  // half-turn pair cancels completely
  b.transforms[0] = rigid(axis_angle({0, 0, std::numbers::pi / 2}), {0, 0, 0});
  b.transforms[1] = rigid(axis_angle({0, 0, -std::numbers::pi / 2}), {0, 0, 0});
  Tape t2;
  EXPECT_THROW(transport_normal(t2, t2.constant(w), t2.constant(n), b), DegenerateError);
}

TEST(TransportNormal, ReturnsUnitVectors) {
  std::mt19937_64 rng(38);
  BoneSet b = two_bones(rng);
  Mat w = random_mat(rng, 50, 3, 0.0, 1.0);
  Mat n = random_mat(rng, 50, 3);
  Tape t;
  Mat out = t.value(transport_normal(t, t.constant(w), t.constant(n), b));
  for (Eigen::Index r = 0; r < 50; ++r) EXPECT_NEAR(out.row(r).norm(), 1.0, 1e-14);
}

TEST(DeformationGradients, ForwardSkinAndTransport) {
  std::mt19937_64 rng(39);
  BoneSet b = two_bones(rng);
  ad::ParamStore store(40);
  store.add("w", 4, 3, ad::Init::Uniform, 1.0);
  store.add("x", 4, 3, ad::Init::Uniform, 1.0);
  store.add("d", 4, 3, ad::Init::Uniform, 0.1);
  Projection p1(5), p2(6);
  testing_support::expect_gradients(store, [&](Tape& t) {
    const Var w = ad::softmax_rows(t, t.parameter("w"));
    const Var x = forward_skin(t, w, t.parameter("x"), t.parameter("d"), b);
    const Var n = transport_normal(t, w, t.parameter("x"), b);
    return ad::add(t, p1(t, x), p2(t, n));
  });
}

TEST(DeformationGradients, FullChainThroughBothNetworks) {
  BodyModel m;
  std::mt19937_64 rng(41);
  PosedBody c = m.canonical(Beta::Zero());
  BodyParams pt = random_pose(m, rng), po = random_pose(m, rng);
  PosedBody bt = m.pose(pt), bo = m.pose(po);
  DeformationConfig cfg;
  cfg.width = 8;
  cfg.layers = 3;
  DeformationField field(cfg, m.joints(), 4);
  ad::ParamStore store(42);
  field.allocate(store);
  // move the zero-initialized output layers off zero so every path carries gradient
  for (auto& seg : store.segments()) {
    if (seg.name.find(".l2.") == std::string::npos) continue;
    for (double& v : store.view(seg.name)) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  }
  store.add("identity", 1, 16, ad::Init::Uniform, 0.5);
  store.add("hash", 6, 4, ad::Init::Uniform, 0.5);
  // points near the posed surface
  Mat x_t(6, 3);
  for (int n = 0; n < 6; ++n) x_t.row(n) = bt.vertices.row(n * 37 % 240) + random_mat(rng, 1, 3, -0.02, 0.02);
  Mat w_b = skinning_weights(nearest_vertices(x_t, bt.vertices), bt, 0.1);
  Mat base = inverse_blend(x_t, w_b, BoneSet::from_body(bt));
  Projection proj(7);
  testing_support::expect_gradients(store, [&](Tape& t) {
    const Var id = t.parameter("identity");
    const Var d_t = field.displacement(t, t.constant(x_t), id, pose_features(pt.theta));
    const Var x_c = ad::sub(t, t.constant(base), d_t);
    Mat w_init = skinning_weights(nearest_vertices(t, t.value(x_c), c.vertices), c, 0.1);
    const Var w_f = forward_weights(t, field.weight_logits(t, t.parameter("hash"), id), w_init);
    const Var d_o = field.displacement(t, x_c, id, pose_features(po.theta));
    return proj(t, forward_skin(t, w_f, x_c, d_o, BoneSet::from_body(bo)));
  });
}

TEST(DeformationField, ZeroInitializedNetworksGiveSkeletonLbs) {
  BodyModel m;
  DeformationField field(DeformationConfig{}, m.joints(), 16);
  ad::ParamStore store(43);
  field.allocate(store);
  std::mt19937_64 rng(44);
  Tape t(&store);
  const Var id = t.constant(random_mat(rng, 1, 16));
  Mat x = random_mat(rng, 7, 3);
  EXPECT_EQ(t.value(field.displacement(t, t.constant(x), id, random_mat(rng, 1, 24))).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(t.value(field.weight_logits(t, t.constant(random_mat(rng, 7, 16)), id)).cwiseAbs().maxCoeff(), 0.0);
}

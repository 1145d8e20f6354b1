#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "avatarfield/body.hpp"
#include "avatarfield/errors.hpp"
#include "test_support.hpp"

using namespace avatarfield;

namespace {

using Beta = Eigen::Matrix<double, kShapeDims, 1>;

BodyParams random_pose(const BodyModel& m, std::mt19937_64& rng, double spread = 0.6) {
  std::uniform_real_distribution<double> u(-spread, spread);
  BodyParams p = m.canonical_params(Beta::Zero());
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta.data()[i] += u(rng);
  p.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return p;
}

// root -> 1 -> 2, all along +x
Skeleton chain() {
  Skeleton s;
  s.parent = {-1, 0, 1};
  s.offset.resize(3, 3);
  s.offset << 0, 0, 0, 1, 0, 0, 1, 0, 0;
  s.bone.resize(3, 3);
  s.bone << 1, 0, 0, 1, 0, 0, 0.5, 0, 0;
  s.radius = {0.1, 0.1, 0.1};
  s.length_slot = {kArmLength, kArmLength, kArmLength};
  s.radius_slot = {kArmRadius, kArmRadius, kArmRadius};
  s.end_child = {1, 2, -1};
  s.canonical_pose = Mat::Zero(3, 3);
  return s;
}

}  // namespace

TEST(Body, DefaultSkeletonHasEightJointsAnd240Vertices) {
  BodyModel m;
  EXPECT_EQ(m.joints(), 8);
  EXPECT_EQ(m.vertex_count(), 240);
}

TEST(Body, CanonicalPoseHasIdentityTransforms) {
  BodyModel m;
  PosedBody b = m.canonical(Beta::Zero());
  for (const auto& B : b.transforms) EXPECT_LE((B - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  PosedBody again = m.pose(m.canonical_params(Beta::Zero()));
  EXPECT_EQ(b.vertices, again.vertices);
}

TEST(Body, ChildJointRotatesAboutParentJoint) {
  BodyModel m(chain());
  BodyParams p = m.canonical_params(Beta::Zero());
  p.theta(1, 2) = std::numbers::pi / 2;
  PosedBody b = m.pose(p);
  EXPECT_NEAR(b.joints(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(b.joints(1, 1), 0.0, 1e-12);
  // joint 2 was at (2,0,0); quarter turn about (1,0,0) puts it at (1,1,0)
  EXPECT_NEAR(b.joints(2, 0), 1.0, 1e-12);
  EXPECT_NEAR(b.joints(2, 1), 1.0, 1e-12);
  EXPECT_NEAR(b.joints(2, 2), 0.0, 1e-12);
}

TEST(Body, GlobalLengthScalesJointDistances) {
  BodyModel m;
  Beta beta = Beta::Zero();
  beta[kGlobalLength] = 2.0;  // 1 + 0.25 * 2 = 1.5
  PosedBody a = m.canonical(Beta::Zero());
  PosedBody b = m.canonical(beta);
  for (int j = 1; j < m.joints(); ++j) {
    const int p = m.skeleton().parent[static_cast<std::size_t>(j)];
    const double da = (a.joints.row(j) - a.joints.row(p)).norm();
    const double db = (b.joints.row(j) - b.joints.row(p)).norm();
    EXPECT_NEAR(db, 1.5 * da, 1e-12);
  }
}

TEST(Body, BoneChainsAreRigidUnderRandomPoses) {
  BodyModel m;
  std::mt19937_64 rng(21);
  PosedBody rest = m.canonical(Beta::Zero());
  for (int trial = 0; trial < 20; ++trial) {
    PosedBody b = m.pose(random_pose(m, rng));
    for (int j = 1; j < m.joints(); ++j) {
      const int p = m.skeleton().parent[static_cast<std::size_t>(j)];
      EXPECT_NEAR((b.joints.row(j) - b.joints.row(p)).norm(), (rest.joints.row(j) - rest.joints.row(p)).norm(), 1e-12);
    }
    for (const auto& B : b.transforms) {
      const Eigen::Matrix3d R = B.topLeftCorner<3, 3>();
      EXPECT_LE((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    }
  }
}

TEST(Body, RelativeTransformsCompose) {
  BodyModel m;
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    PosedBody a = m.pose(random_pose(m, rng));
    PosedBody b = m.pose(random_pose(m, rng));
    for (int v = 0; v < m.vertex_count(); ++v) {
      const int bone = a.vertex_bone[static_cast<std::size_t>(v)];
      if (a.weights(v, bone) != 1.0) continue;  // rigid vertices only
      const auto i = static_cast<std::size_t>(bone);
      const Eigen::Matrix4d rel = b.transforms[i] * a.transforms[i].inverse();
      const Eigen::Vector3d moved = (rel * a.vertices.row(v).transpose().homogeneous()).head<3>();
      EXPECT_LE((moved - b.vertices.row(v).transpose()).norm(), 1e-12);
    }
  }
}

TEST(Body, TemplateWeightsAreSimplexRows) {
  BodyModel m;
  PosedBody b = m.canonical(Beta::Zero());
  EXPECT_GE(b.weights.minCoeff(), 0.0);
  for (Eigen::Index v = 0; v < b.weights.rows(); ++v) EXPECT_NEAR(b.weights.row(v).sum(), 1.0, 1e-15);
}

TEST(NearestVertex, SurfaceVertexCopiesItsWeights) {
  BodyModel m;
  PosedBody b = m.canonical(Beta::Zero());
  const int v = 37;
  Eigen::VectorXd w = nearest_vertex_weights(b.vertices.row(v).transpose(), b, 0.1);
  EXPECT_EQ(w.head(m.joints()).transpose(), b.weights.row(v));
  EXPECT_EQ(w[m.joints()], 0.0);
}

TEST(NearestVertex, FarPointIsBackground) {
  BodyModel m;
  PosedBody b = m.canonical(Beta::Zero());
  const double tau = 0.1;
  // 10 tau beyond the body box on every axis
  Eigen::Vector3d x = vertex_box(b).hi + Eigen::Vector3d::Constant(10 * tau);
  Eigen::VectorXd w = nearest_vertex_weights(x, b, tau);
  EXPECT_EQ(w.head(m.joints()).norm(), 0.0);
  EXPECT_EQ(w[m.joints()], 1.0);
}

TEST(NearestVertex, TieGoesToLowestIndex) {
  Mat verts(3, 3);
  verts << 1, 0, 0, -1, 0, 0, 0, 5, 0;
  Mat x = Mat::Zero(1, 3);
  EXPECT_EQ(nearest_vertices(x, verts).index[0], 0);
  verts.row(0).swap(verts.row(1));
  EXPECT_EQ(nearest_vertices(x, verts).index[0], 0);
}

TEST(NearestVertex, EmptyVertexSetIsAnError) {
  EXPECT_THROW(nearest_vertices(Mat::Zero(1, 3), Mat(0, 3)), ContractError);
}

TEST(NearestVertex, OutputIsAlwaysOnSimplex) {
  BodyModel m;
  std::mt19937_64 rng(23);
  PosedBody b = m.pose(random_pose(m, rng));
  Mat x = testing_support::random_mat(rng, 500, 3, -1.0, 1.0);
  Mat w = skinning_weights(nearest_vertices(x, b.vertices), b, 0.1);
  EXPECT_GE(w.minCoeff(), 0.0);
  for (Eigen::Index n = 0; n < w.rows(); ++n) EXPECT_NEAR(w.row(n).sum(), 1.0, 1e-12);
}

TEST(Skeleton, ValidationNamesBadParent) {
  Skeleton s = chain();
  s.parent[2] = 2;
  EXPECT_THROW(s.validate(), ValidationError);
}

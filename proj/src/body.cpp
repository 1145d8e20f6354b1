#include "avatarfield/body.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "avatarfield/errors.hpp"

namespace avatarfield {

namespace {

double shape_scale(const Eigen::Matrix<double, kShapeDims, 1>& beta, int slot) { return 1.0 + 0.25 * beta[slot]; }

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

Eigen::Matrix4d rigid(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

Eigen::Matrix4d rigid_inverse(const Eigen::Matrix4d& m) {
  const Eigen::Matrix3d Rt = m.topLeftCorner<3, 3>().transpose();
  return rigid(Rt, -Rt * m.topRightCorner<3, 1>());
}

// Two unit vectors completing `dir` to an orthonormal frame.
void perpendicular_pair(const Eigen::Vector3d& dir, Eigen::Vector3d& a, Eigen::Vector3d& b) {
  const Eigen::Vector3d helper = std::abs(dir.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
  a = dir.cross(helper).normalized();
  b = dir.cross(a).normalized();
}

}  // namespace

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& aa) {
  const double angle = aa.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

void Skeleton::validate() const {
  const auto J = static_cast<Eigen::Index>(parent.size());
  if (J == 0 || J > 24) throw ValidationError("skeleton: joint count must be in [1, 24]");
  if (parent[0] != -1) throw ValidationError("skeleton: joint 0 must be the root");
  for (Eigen::Index j = 1; j < J; ++j) {
    if (parent[static_cast<std::size_t>(j)] < 0 || parent[static_cast<std::size_t>(j)] >= j) {
      throw ValidationError("skeleton: parent of joint " + std::to_string(j) + " does not precede it");
    }
  }
  if (offset.rows() != J || bone.rows() != J || canonical_pose.rows() != J || offset.cols() != 3 ||
      bone.cols() != 3 || canonical_pose.cols() != 3 || static_cast<Eigen::Index>(radius.size()) != J ||
      static_cast<Eigen::Index>(length_slot.size()) != J || static_cast<Eigen::Index>(radius_slot.size()) != J ||
      static_cast<Eigen::Index>(end_child.size()) != J) {
    throw ValidationError("skeleton: per-joint arrays disagree in length");
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    if (!(bone.row(j).norm() > 0.0) || !(radius[static_cast<std::size_t>(j)] > 0.0)) {
      throw ValidationError("skeleton: joint " + std::to_string(j) + " has an empty capsule");
    }
  }
}

Skeleton Skeleton::default_skeleton() {
  Skeleton s;
  s.parent = {-1, 0, 0, 2, 0, 4, 0, 0};
  s.offset.resize(8, 3);
  s.offset << 0, 0, 0,  //
      0, 0.44, 0,       // head on top of the torso
      0.13, 0.38, 0,    // left shoulder
      0, -0.2, 0,       // left elbow
      -0.13, 0.38, 0,   // right shoulder
      0, -0.2, 0,       // right elbow
      0.07, -0.02, 0,   // left hip
      -0.07, -0.02, 0;  // right hip
  s.bone.resize(8, 3);
  s.bone << 0, 0.42, 0,  //
      0, 0.14, 0,        //
      0, -0.2, 0,        //
      0, -0.2, 0,        //
      0, -0.2, 0,        //
      0, -0.2, 0,        //
      0, -0.5, 0,        //
      0, -0.5, 0;
  s.radius = {0.09, 0.07, 0.035, 0.03, 0.035, 0.03, 0.05, 0.05};
  s.length_slot = {kTorsoLength, kHeadLength, kArmLength, kArmLength, kArmLength, kArmLength, kLegLength, kLegLength};
  s.radius_slot = {kTorsoRadius, kTorsoRadius, kArmRadius, kArmRadius, kArmRadius, kArmRadius, kLegRadius, kLegRadius};
  s.end_child = {1, -1, 3, -1, 5, -1, -1, -1};
  const double arm = std::numbers::pi / 4.0;
  const double leg = 10.0 * std::numbers::pi / 180.0;
  s.canonical_pose = Mat::Zero(8, 3);
  s.canonical_pose(2, 2) = arm;
  s.canonical_pose(4, 2) = -arm;
  s.canonical_pose(6, 2) = leg;
  s.canonical_pose(7, 2) = -leg;
  return s;
}

BodyModel::BodyModel(Skeleton skeleton) : skel_(std::move(skeleton)) {
  skel_.validate();
  const int J = joints();
  template_weights_ = Mat::Zero(vertex_count(), J);
  for (int b = 0; b < J; ++b) {
    for (int r = 0; r < kRings; ++r) {
      for (int k = 0; k < kRingVertices; ++k) {
        template_local_.push_back({b, r / double(kRings - 1), 2.0 * std::numbers::pi * (k + 0.5 * (r % 2)) / kRingVertices, 0});
      }
    }
    for (int cap : {-1, 1}) {
      for (int k = 0; k < kCapVertices; ++k) {
        template_local_.push_back(
            {b, cap < 0 ? 0.0 : 1.0, 2.0 * std::numbers::pi * (k + (cap < 0 ? 0.25 : 0.75)) / kCapVertices, cap});
      }
    }
  }
  for (int v = 0; v < vertex_count(); ++v) {
    const LocalVertex& lv = template_local_[static_cast<std::size_t>(v)];
    const int parent = skel_.parent[static_cast<std::size_t>(lv.bone)];
    const int child = skel_.end_child[static_cast<std::size_t>(lv.bone)];
    double own = 1.0;
    if (lv.along < 0.2 && parent >= 0) {
      const double s = smoothstep(lv.along / 0.2);
      own = 0.5 + 0.5 * s;
      template_weights_(v, parent) = 1.0 - own;
    } else if (lv.along > 0.8 && child >= 0) {
      const double s = smoothstep((1.0 - lv.along) / 0.2);
      own = 0.5 + 0.5 * s;
      template_weights_(v, child) = 1.0 - own;
    }
    template_weights_(v, lv.bone) = own;
  }
}

Mat BodyModel::scaled_offsets(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  Mat out = skel_.offset * shape_scale(beta, kGlobalLength);
  for (int j = 1; j < joints(); ++j) {
    const int p = skel_.parent[static_cast<std::size_t>(j)];
    out.row(j) *= shape_scale(beta, skel_.length_slot[static_cast<std::size_t>(p)]);
    if (p == 0 && skel_.length_slot[static_cast<std::size_t>(j)] == kArmLength) {
      out(j, 0) *= shape_scale(beta, kShoulderWidth);
    }
  }
  return out;
}

Mat BodyModel::scaled_bones(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  Mat out = skel_.bone * shape_scale(beta, kGlobalLength);
  for (int j = 0; j < joints(); ++j) out.row(j) *= shape_scale(beta, skel_.length_slot[static_cast<std::size_t>(j)]);
  return out;
}

std::vector<double> BodyModel::scaled_radii(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  std::vector<double> out(skel_.radius);
  for (int j = 0; j < joints(); ++j) {
    out[static_cast<std::size_t>(j)] *=
        shape_scale(beta, kGlobalRadius) * shape_scale(beta, skel_.radius_slot[static_cast<std::size_t>(j)]);
  }
  return out;
}

BodyParams BodyModel::canonical_params(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  BodyParams p;
  p.beta = beta;
  p.theta = skel_.canonical_pose;
  return p;
}

std::vector<Eigen::Matrix4d> BodyModel::joint_frames(const BodyParams& p) const {
  const int J = joints();
  if (p.theta.rows() != J || p.theta.cols() != 3) throw ContractError("pose must be J x 3 axis-angle");
  const Mat off = scaled_offsets(p.beta);
  std::vector<Eigen::Matrix4d> G(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    const Eigen::Matrix4d local = rigid(axis_angle(p.theta.row(j).transpose()), off.row(j).transpose());
    const int parent = skel_.parent[static_cast<std::size_t>(j)];
    if (parent < 0) {
      G[0] = local;
      G[0].topRightCorner<3, 1>() += p.translation;
    } else {
      G[static_cast<std::size_t>(j)] = G[static_cast<std::size_t>(parent)] * local;
    }
  }
  return G;
}

PosedBody BodyModel::pose(const BodyParams& p) const {
  const int J = joints();
  const auto G = joint_frames(p);
  const auto Gc = joint_frames(canonical_params(p.beta));
  const Mat bones = scaled_bones(p.beta);
  const auto radii = scaled_radii(p.beta);

  PosedBody out;
  out.transforms.resize(static_cast<std::size_t>(J));
  out.joints.resize(J, 3);
  for (int j = 0; j < J; ++j) {
    out.transforms[static_cast<std::size_t>(j)] = G[static_cast<std::size_t>(j)] * rigid_inverse(Gc[static_cast<std::size_t>(j)]);
    out.joints.row(j) = G[static_cast<std::size_t>(j)].topRightCorner<3, 1>().transpose();
  }
  out.weights = template_weights_;
  out.vertices.resize(vertex_count(), 3);
  out.vertex_bone.resize(static_cast<std::size_t>(vertex_count()));
  const double c45 = std::sqrt(0.5);
  for (int v = 0; v < vertex_count(); ++v) {
    const LocalVertex& lv = template_local_[static_cast<std::size_t>(v)];
    const Eigen::Vector3d axis = bones.row(lv.bone).transpose();
    const Eigen::Vector3d dir = axis.normalized();
    Eigen::Vector3d a, b;
    perpendicular_pair(dir, a, b);
    const double r = radii[static_cast<std::size_t>(lv.bone)];
    const Eigen::Vector3d radial = std::cos(lv.angle) * a + std::sin(lv.angle) * b;
    Eigen::Vector3d local = lv.along * axis;
    if (lv.cap == 0) {
      local += r * radial;
    } else {
      local += r * (c45 * radial + lv.cap * c45 * dir);
    }
    // Template vertex in the canonical pose, then blended into the target pose.
    const Eigen::Vector4d rest = Gc[static_cast<std::size_t>(lv.bone)] * local.homogeneous();
    Eigen::Vector4d posed = Eigen::Vector4d::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = template_weights_(v, j);
      if (w != 0.0) posed += w * (out.transforms[static_cast<std::size_t>(j)] * rest);
    }
    out.vertices.row(v) = posed.head<3>().transpose();
    out.vertex_bone[static_cast<std::size_t>(v)] = lv.bone;
  }
  return out;
}

PosedBody BodyModel::canonical(const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  return pose(canonical_params(beta));
}

NearestVertex nearest_vertices(const Mat& points, const Mat& vertices) {
  if (vertices.rows() == 0) throw ContractError("nearest vertex lookup on an empty vertex set");
  NearestVertex out;
  out.index.resize(static_cast<std::size_t>(points.rows()));
  out.distance.resize(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index n = 0; n < points.rows(); ++n) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
      const double d = (vertices.row(v) - points.row(n)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::int32_t>(v);
      }
    }
    out.index[static_cast<std::size_t>(n)] = arg;
    out.distance[static_cast<std::size_t>(n)] = std::sqrt(best);
  }
  return out;
}

NearestVertex nearest_vertices(ad::Tape& t, const Mat& points, const Mat& vertices) {
  NearestVertex out = nearest_vertices(points, vertices);
  t.sync(out.index);
  for (std::size_t n = 0; n < out.index.size(); ++n) {
    out.distance[n] = (vertices.row(out.index[n]) - points.row(static_cast<Eigen::Index>(n))).norm();
  }
  return out;
}

Mat skinning_weights(const NearestVertex& nn, const PosedBody& body, double tau) {
  if (!(tau > 0.0)) throw ContractError("skinning weights: tau must be positive");
  const auto J = body.weights.cols();
  Mat w = Mat::Zero(static_cast<Eigen::Index>(nn.index.size()), J + 1);
  for (std::size_t n = 0; n < nn.index.size(); ++n) {
    const auto row = static_cast<Eigen::Index>(n);
    if (nn.distance[n] <= tau) {
      w.row(row).head(J) = body.weights.row(nn.index[n]);
      w(row, J) = std::max(0.0, 1.0 - w.row(row).head(J).sum());
    } else {
      w(row, J) = 1.0;
    }
  }
  return w;
}

Eigen::VectorXd nearest_vertex_weights(const Eigen::Vector3d& x, const PosedBody& body, double tau) {
  return skinning_weights(nearest_vertices(x.transpose(), body.vertices), body, tau).row(0).transpose();
}

Box vertex_box(const PosedBody& body) {
  Box b;
  b.lo = body.vertices.colwise().minCoeff().transpose();
  b.hi = body.vertices.colwise().maxCoeff().transpose();
  return b;
}

}  // namespace avatarfield

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "avatarfield/autodiff/tape.hpp"

namespace avatarfield {

using ad::Mat;

inline constexpr int kShapeDims = 10;

// Shape coefficient slots; each scales its quantity by (1 + 0.25 beta_k).
enum ShapeSlot : int {
  kGlobalLength = 0,
  kGlobalRadius,
  kTorsoLength,
  kArmLength,
  kLegLength,
  kHeadLength,
  kTorsoRadius,
  kArmRadius,
  kLegRadius,
  kShoulderWidth,
};

// Each joint owns one capsule from its joint position along `bone`.
struct Skeleton {
  std::vector<int> parent;
  Mat offset;                  // J x 3, rest offset from the parent joint (root: absolute)
  Mat bone;                    // J x 3, capsule axis in the rest frame
  std::vector<double> radius;  // J
  std::vector<int> length_slot;
  std::vector<int> radius_slot;
  std::vector<int> end_child;  // joint attached at the bone end, -1 if none
  Mat canonical_pose;          // J x 3 axis-angle

  [[nodiscard]] int joints() const { return static_cast<int>(parent.size()); }
  // Throws ValidationError unless parents precede children and shapes agree.
  void validate() const;

  // Eight capsules: torso, head, left/right upper and lower arm, left/right leg.
  // Rest pose hangs the arms down; the canonical pose raises them 45 degrees
  // and spreads the legs 10 degrees.
  static Skeleton default_skeleton();
};

struct BodyParams {
  Eigen::Matrix<double, kShapeDims, 1> beta = Eigen::Matrix<double, kShapeDims, 1>::Zero();
  Mat theta;  // J x 3 axis-angle
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct PosedBody {
  Mat vertices;  // V x 3
  Mat weights;   // V x J, rows on the simplex
  Mat joints;    // J x 3
  std::vector<Eigen::Matrix4d> transforms;  // B_i, canonical -> posed
  std::vector<int> vertex_bone;             // owning capsule of each vertex
};

class BodyModel {
 public:
  static constexpr int kRings = 4;
  static constexpr int kRingVertices = 6;
  static constexpr int kCapVertices = 3;
  static constexpr int kVerticesPerBone = kRings * kRingVertices + 2 * kCapVertices;

  explicit BodyModel(Skeleton skeleton = Skeleton::default_skeleton());

  [[nodiscard]] const Skeleton& skeleton() const { return skel_; }
  [[nodiscard]] int joints() const { return skel_.joints(); }
  [[nodiscard]] int vertex_count() const { return joints() * kVerticesPerBone; }

  // World transforms G_i of every joint frame.
  [[nodiscard]] std::vector<Eigen::Matrix4d> joint_frames(const BodyParams& p) const;
  [[nodiscard]] PosedBody pose(const BodyParams& p) const;
  [[nodiscard]] PosedBody canonical(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;
  [[nodiscard]] BodyParams canonical_params(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;

  // Scaled rest geometry for a shape vector.
  [[nodiscard]] Mat scaled_offsets(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;
  [[nodiscard]] Mat scaled_bones(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;
  [[nodiscard]] std::vector<double> scaled_radii(const Eigen::Matrix<double, kShapeDims, 1>& beta) const;

 private:
  Skeleton skel_;
  struct LocalVertex {
    int bone;
    double along;  // fraction of the bone length at the ring or cap base
    double angle;
    int cap;       // -1 start cap, +1 end cap, 0 ring
  };
  std::vector<LocalVertex> template_local_;
  Mat template_weights_;
};

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& aa);

struct NearestVertex {
  std::vector<std::int32_t> index;  // per point
  std::vector<double> distance;
};

// Brute-force nearest vertex, ties to the lowest index.
NearestVertex nearest_vertices(const Mat& points, const Mat& vertices);
// Same, with the chosen indices recorded on (or replayed from) the tape's log.
NearestVertex nearest_vertices(ad::Tape& t, const Mat& points, const Mat& vertices);

// (J+1)-simplex rows: the nearest vertex's weights when it lies within tau,
// otherwise the background one-hot (last column).
Mat skinning_weights(const NearestVertex& nn, const PosedBody& body, double tau);
Eigen::VectorXd nearest_vertex_weights(const Eigen::Vector3d& x, const PosedBody& body, double tau);

struct Box {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  [[nodiscard]] Box expanded(double m) const {
    return {lo - Eigen::Vector3d::Constant(m), hi + Eigen::Vector3d::Constant(m)};
  }
  [[nodiscard]] Eigen::Vector3d center() const { return 0.5 * (lo + hi); }
  [[nodiscard]] Eigen::Vector3d extent() const { return hi - lo; }
};

Box vertex_box(const PosedBody& body);

}  // namespace avatarfield

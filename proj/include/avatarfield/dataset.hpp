#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "avatarfield/appearance.hpp"
#include "avatarfield/body.hpp"
#include "avatarfield/camera.hpp"

namespace avatarfield {

// What to synthesize. Cameras sit on a ring around the body center, looking
// at it, the first one at `first_azimuth_deg` and the rest evenly spaced.
struct SceneSpec {
  int subjects = 2;
  int poses = 3;
  int cameras = 4;
  int image_size = 64;
  double radius = 3.0;
  double elevation_deg = 30.0;
  double first_azimuth_deg = 20.0;
  double focal = 120.0;
  double beta_range = 0.6;   // beta_k uniform in +-beta_range
  double pose_scale = 1.0;   // multiplies the per-joint rotation ranges
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

struct Subject {
  Eigen::Matrix<double, kShapeDims, 1> beta = Eigen::Matrix<double, kShapeDims, 1>::Zero();
  Mat albedo;  // J x 3
};

// One target view to predict from three input views of a (possibly different) pose.
struct EvalPair {
  int subject = 0;
  int input_pose = 0;
  std::vector<int> input_cameras;
  int target_pose = 0;
  int target_camera = 0;
};

struct Dataset {
  std::filesystem::path root;
  SceneSpec spec;
  Skeleton skeleton;
  std::vector<Camera> cameras;
  std::vector<Subject> subjects;
  std::vector<std::vector<BodyParams>> poses;  // [subject][pose]
  std::vector<std::vector<std::vector<Image>>> images;  // [subject][pose][camera]
  std::vector<std::vector<std::vector<Image>>> masks;
  std::vector<int> train_poses;
  std::vector<EvalPair> novel_view;
  std::vector<EvalPair> novel_pose;

  [[nodiscard]] const Image& image(int s, int p, int c) const { return images.at(s).at(p).at(c); }
  [[nodiscard]] const Image& mask(int s, int p, int c) const { return masks.at(s).at(p).at(c); }
  [[nodiscard]] int pose_count() const { return poses.empty() ? 0 : static_cast<int>(poses[0].size()); }
};

// Capsules of a posed body: segment a_j -> b_j with radius r_j.
struct Capsules {
  std::vector<Eigen::Vector3d> a, b;
  std::vector<double> r;
};
Capsules posed_capsules(const BodyModel& model, const BodyParams& params);

struct CapsuleHit {
  bool hit = false;
  double depth = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  int bone = -1;
};
// Closest capsule hit along the ray (direction need not be unit; depth is in
// units of |dir|).
CapsuleHit trace_capsules(const Capsules& caps, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

// Directional light and ambient term of the synthetic scenes.
inline const Eigen::Vector3d kLightDirection = Eigen::Vector3d(0.3, 0.8, 0.5).normalized();
inline constexpr double kAmbient = 0.3;

// Lambertian rendering with per-bone albedo; background black, mask = hit set.
void render_analytic(const BodyModel& model, const BodyParams& params, const Mat& albedo, const Camera& cam,
                     Image& rgb, Image& mask);

std::vector<Camera> ring_cameras(const SceneSpec& spec);

// Writes images/, masks/, skeleton.json, poses.json and manifest.json; returns
// the manifest.
nlohmann::json synthesize(const SceneSpec& spec, const std::filesystem::path& out_dir);

// Accepts the dataset directory or its manifest.json.
Dataset load_dataset(const std::filesystem::path& path);

nlohmann::json skeleton_to_json(const Skeleton& s);
Skeleton skeleton_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const Camera& c);
Camera camera_from_json(const nlohmann::json& j);
nlohmann::json pose_to_json(const BodyParams& p);
BodyParams pose_from_json(const nlohmann::json& j, int joints);

}  // namespace avatarfield

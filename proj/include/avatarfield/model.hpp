#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "json.hpp"

#include "avatarfield/appearance.hpp"
#include "avatarfield/body.hpp"
#include "avatarfield/deformation.hpp"
#include "avatarfield/encodings.hpp"
#include "avatarfield/geometry.hpp"
#include "avatarfield/renderer.hpp"
#include "avatarfield/shading.hpp"

namespace avatarfield {

// Each flag removes one pathway of the full model; the parameter layout never
// changes, so any checkpoint can be evaluated under any combination.
struct AblationFlags {
  bool no_shading = false;
  bool no_displacement = false;
  bool no_learnable_skinning = false;
  bool no_geo_feats = false;
  bool no_identity = false;
  bool normals_to_viewdirs = false;

  [[nodiscard]] nlohmann::json to_json() const;
  static AblationFlags from_json(const nlohmann::json& j);
};

struct ModelConfig {
  HashGridConfig hash{};
  DeformationConfig deformation{};
  SdfConfig sdf{};
  AppearanceConfig appearance{};
  ShadingConfig shading{};
  int subjects = 1;
  int coarse_samples = 64;
  int fine_samples = 16;
  double ray_box_margin = 0.1;
  // Canonical box shared by every subject (union of their canonical bodies,
  // expanded by 0.1).
  Box canonical_box{Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};
  AblationFlags ablations{};
  Skeleton skeleton = Skeleton::default_skeleton();

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Union of the canonical vertex boxes of the given shapes, expanded.
Box canonical_box_for(const BodyModel& body, const std::vector<Eigen::Matrix<double, kShapeDims, 1>>& betas,
                      double margin = 0.1);

// Target view to render and the input views it is rendered from.
struct RenderRequest {
  int subject = 0;
  BodyParams target;
  Camera camera;
  BodyParams input;
  std::vector<Camera> input_cameras;
  std::vector<const Image*> input_images;
};

// Value-only geometry of a request.
struct Scene {
  int subject = 0;
  Eigen::Matrix<double, kShapeDims, 1> beta;
  PosedBody target_body, input_body, canonical_body;
  BoneSet target_bones, input_bones;
  Mat target_pose, input_pose;  // 1 x 3J
  Box ray_box;
  Camera camera;
  std::vector<Camera> input_cameras;
  std::vector<const Image*> input_images;
};

// Per-tape inputs shared by every ray batch of a request.
struct SceneVars {
  Var identity;
  Var illumination;
  std::vector<ViewInput> views;
  bool appearance = false;
};

enum class Phase { Warmup, Full };

// Per-sample quantities of the foreground samples of one pass.
struct SampleBatch {
  std::vector<std::int32_t> rows;  // foreground rows among the pass's samples
  Var s, sigma, color, gradient, normal, geo;
  Var delta_t, delta_o;
  Var x_c;
};

struct RayResult {
  int rays = 0;
  Var coarse;  // rays x 4 (C, M) or rays x 1 (M) during warmup
  Var fine;
  Var s_min;                        // one row per ray with foreground samples
  std::vector<std::int32_t> s_min_rays;
  // Omega: points drawn from the foreground samples of both passes.
  Var omega_gradient, omega_delta_t, omega_delta_o;
  Var omega_normal, omega_normal_shifted;  // normals at x and x + eps
  Var vertex_normal, vertex_normal_shifted;
  std::size_t foreground_samples = 0;
};

struct RegularizerConfig {
  int omega_points = 128;
  int normal_points = 32;
  int vertex_points = 32;
  double epsilon = 0.01;
};

class AvatarModel {
 public:
  explicit AvatarModel(ModelConfig cfg);

  void allocate(ad::ParamStore& store) const;

  [[nodiscard]] Scene scene(const RenderRequest& req) const;
  SceneVars prepare(Tape& t, const Scene& scene, Phase phase) const;

  // Renders the rays; coarse depths are jittered by `rng` (bin midpoints when
  // null), fine depths importance-sampled. `aux_rng` drives the Omega and eps
  // draws when regularizers are requested.
  RayResult render(Tape& t, const Scene& scene, const SceneVars& vars, const std::vector<Ray>& rays, Phase phase,
                   std::mt19937_64* rng, std::mt19937_64* aux_rng = nullptr,
                   const RegularizerConfig* regularizers = nullptr) const;

  // Value-only render of every pixel: (w*h x 3) color and (w*h x 1) mask.
  void render_image(const ad::ParamStore& store, const RenderRequest& req, Image& rgb, Image& mask, int threads = 1,
                    int chunk = 512) const;

  // SDF of subject `subject` at canonical points, with zero pixel features.
  [[nodiscard]] Mat canonical_sdf(const ad::ParamStore& store, int subject, const Mat& x_c,
                                  const Eigen::Matrix<double, kShapeDims, 1>& beta) const;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const BodyModel& body() const { return body_; }
  [[nodiscard]] const HashGrid& grid() const { return grid_; }
  [[nodiscard]] const SdfNetwork& sdf() const { return sdf_; }
  [[nodiscard]] const DeformationField& deformation() const { return deform_; }
  [[nodiscard]] const Appearance& appearance() const { return appearance_; }
  [[nodiscard]] const ShadingNetwork& shading() const { return shading_; }

  SampleBatch eval_samples(Tape& t, const Scene& scene, const SceneVars& vars, const Mat& x_t, const Mat& dirs,
                           Phase phase) const;

 private:
  Var identity_code(Tape& t, int subject) const;
  Var canonical_normals(Tape& t, Var x_c, const Eigen::Matrix<double, kShapeDims, 1>& beta, Var identity,
                        Var geo) const;

  ModelConfig cfg_;
  BodyModel body_;
  HashGrid grid_;
  DeformationField deform_;
  SdfNetwork sdf_;
  Appearance appearance_;
  ShadingNetwork shading_;
};

}  // namespace avatarfield

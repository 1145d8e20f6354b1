#pragma once

#include <string>
#include <vector>

#include "avatarfield/camera.hpp"
#include "avatarfield/encodings.hpp"
#include "avatarfield/nn.hpp"

namespace avatarfield {

// Row-major image or feature map: pixel (x, y) is row y * width + x.
struct Image {
  int width = 0;
  int height = 0;
  Mat pixels;  // (width * height) x channels

  Image() = default;
  Image(int w, int h, int channels) : width(w), height(h), pixels(Mat::Zero(static_cast<Eigen::Index>(w) * h, channels)) {}
  [[nodiscard]] Eigen::Index index(int x, int y) const { return static_cast<Eigen::Index>(y) * width + x; }
};

// 3x3 patches (zero padding 1) of an (h*w x c) map as rows of an
// (h'*w' x 9c) matrix, h' = ceil(h / stride).
Var im2col3x3(Tape& t, Var map, int width, int height, int stride);
[[nodiscard]] inline int strided_size(int n, int stride) { return (n + stride - 1) / stride; }

struct ConvSpec {
  std::string name;
  int in_channels = 3;
  int hidden = 16;
  int out_channels = 16;
  int layers = 3;
};

// Conv stack: first layer stride 2, ReLU between layers, linear output.
class ConvNet {
 public:
  ConvNet() = default;
  explicit ConvNet(ConvSpec spec) : spec_(std::move(spec)) {}
  void allocate(ad::ParamStore& store) const;
  // image: (h*w x in) -> (ceil(h/2)*ceil(w/2) x out)
  Var forward(Tape& t, Var image, int width, int height) const;
  [[nodiscard]] const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
};

// Bilinear lookup of a map at continuous pixel coordinates (N x 2, pixel
// centers at integers, inside [0, w-1] x [0, h-1]).
Var sample_bilinear(Tape& t, Var map, int width, int height, Var uv);

// Pinhole projection of N x 3 points to N x 2 pixel coordinates.
Var project_points(Tape& t, Var x, const Camera& cam);

// Mean of each image quadrant of a map, quadrants in reading order: 1 x 4c.
Var quadrant_pool(Tape& t, Var map, int width, int height);

// One input view with its feature maps already on the tape.
struct ViewInput {
  Camera camera;
  const Image* image = nullptr;
  Var geo_map;
  Var rgb_map;
  int map_width = 0;
  int map_height = 0;
};

struct AppearanceConfig {
  int geo_channels = 16;
  int rgb_channels = 8;
  int cnn_hidden = 16;
  int keypoint_features = 16;
  int blend_width = 64;
  int blend_layers = 4;
  KeypointEncodingConfig keypoints{};
  bool normals_to_viewdirs = false;
};

// Per-view samples and the pooled geometry feature.
struct FusedViews {
  std::vector<Var> g;       // N x (keypoint_features + geo_channels)
  std::vector<Var> rgb_feat;
  std::vector<Var> color;   // N x 3
  std::vector<std::int32_t> valid;  // N x V row-major
  Var geo;                  // N x 2 * (keypoint_features + geo_channels)
};

class Appearance {
 public:
  Appearance() = default;
  Appearance(AppearanceConfig cfg, int joints);

  void allocate(ad::ParamStore& store) const;

  [[nodiscard]] const ConvNet& geo_cnn() const { return geo_cnn_; }
  [[nodiscard]] const ConvNet& rgb_cnn() const { return rgb_cnn_; }

  // Validity per (point, view): in front of the camera and inside the frame.
  std::vector<std::int32_t> visibility(Tape& t, const Mat& x_o, const std::vector<ViewInput>& views) const;

  // Every row must see at least one view (see visibility()).
  FusedViews fuse(Tape& t, Var x_o, const Mat& joints, const std::vector<ViewInput>& views,
                  std::vector<std::int32_t> valid) const;

  // c_o = sum_i w_i c_i with w a softmax over valid views. `direction` is the
  // observation-space normal, or the unit view direction when normals are
  // replaced. Returns c_o (N x 3); blend weights in *weights if given.
  Var blend(Tape& t, const FusedViews& fused, Var direction, Var* weights = nullptr) const;

  [[nodiscard]] int geo_dims() const { return 2 * (cfg_.keypoint_features + cfg_.geo_channels); }
  [[nodiscard]] int illumination_dims() const { return 4 * cfg_.rgb_channels; }
  [[nodiscard]] const AppearanceConfig& config() const { return cfg_; }

 private:
  AppearanceConfig cfg_;
  int joints_ = 0;
  ConvNet geo_cnn_;
  ConvNet rgb_cnn_;
  Mlp blend_;
};

}  // namespace avatarfield

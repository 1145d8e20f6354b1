#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avatarfield/autodiff/ops.hpp"
#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/camera.hpp"

namespace avatarfield {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct FourierConfig {
  int bands = 6;
  bool include_input = false;

  [[nodiscard]] int width_per_scalar() const { return 2 * bands + (include_input ? 1 : 0); }
};

// Per input column c the block [x_c?, sin(2^0 pi x_c), cos(2^0 pi x_c), ...,
// sin(2^(L-1) pi x_c), cos(2^(L-1) pi x_c)], blocks concatenated in column order.
Mat fourier_features(const Mat& x, const FourierConfig& cfg);
Var fourier_encode(Tape& t, Var x, const FourierConfig& cfg);

struct HashGridConfig {
  int levels = 8;
  int log2_table_size = 14;
  int features_per_level = 2;
  int base_resolution = 16;
  double per_level_scale = 1.5;

  [[nodiscard]] int output_width() const { return levels * features_per_level; }
  [[nodiscard]] std::int64_t table_size() const { return std::int64_t{1} << log2_table_size; }
  [[nodiscard]] int resolution(int level) const;
};

// Multiresolution grid over the unit cube. Levels whose (res+1)^3 vertices fit
// in the table are indexed densely, finer levels use the spatial hash.
class HashGrid {
 public:
  HashGrid() = default;
  HashGrid(HashGridConfig cfg, std::string segment) : cfg_(cfg), segment_(std::move(segment)) {}

  void allocate(ad::ParamStore& store, double init_scale = 1e-4) const;

  // u: N x 3 in [0,1]^3 -> N x (levels * features).
  Var encode(Tape& t, Var u) const;
  // Spatial Jacobian, stacked by direction: rows [d*N, (d+1)*N) hold
  // d(encode)/du_d. Differentiable in both the table and u.
  Var jacobian(Tape& t, Var u) const;

  [[nodiscard]] std::int64_t vertex_index(int level, std::int64_t x, std::int64_t y, std::int64_t z) const;
  [[nodiscard]] const HashGridConfig& config() const { return cfg_; }
  [[nodiscard]] const std::string& segment() const { return segment_; }

 private:
  HashGridConfig cfg_;
  std::string segment_ = "hashgrid";
};

struct KeypointEncodingConfig {
  double eta = 0.1;
  int bands = 6;
};

// Relative spatial keypoint encoding for one view: for every joint k,
// exp(-|j_k - x|^2 / 2 eta^2) * gamma(z(j_k) - z(x)). x_o: N x 3, joints: J x 3.
// Output N x (J * 2 * bands). Throws DegenerateError if a point is not in
// front of the camera.
Var keypoint_encode(Tape& t, Var x_o, const Mat& joints, const Camera& cam, const KeypointEncodingConfig& cfg);

}  // namespace avatarfield

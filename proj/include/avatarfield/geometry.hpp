#pragma once

#include <Eigen/Dense>

#include "avatarfield/body.hpp"
#include "avatarfield/encodings.hpp"
#include "avatarfield/nn.hpp"

namespace avatarfield {

struct SdfConfig {
  int width = 128;
  int layers = 6;
  int skip = 3;
  double softplus_beta = 100.0;
  double init_radius = 0.4;
  double density_scale_init = 0.1;
};

// Canonical-space coordinates of a batch: hash-grid coordinates u in the unit
// cube (clamped) and q = x_c - box center.
struct CanonicalCoords {
  Var u;
  Var q;
  Eigen::Vector3d inv_extent;
};

CanonicalCoords canonical_coords(Tape& t, Var x_c, const Box& box);

struct SdfInputs {
  CanonicalCoords coords;
  Var hash;                  // N x H, encode(u)
  Mat beta;                  // 1 x 10
  Var identity;              // 1 x D
  Var geo;                   // N x G, or invalid for the zero-feature path
};

// s = F_s(q, phi(u), beta, l_idt, f_geo); negative inside.
class SdfNetwork {
 public:
  SdfNetwork() = default;
  SdfNetwork(SdfConfig cfg, int hash_width, int identity_dims, int geo_dims);

  // Allocates the MLP and the density scale, then applies the geometric
  // initialization: s(q) ~ |q| - init_radius, zero weight on every input but q.
  void allocate(ad::ParamStore& store) const;

  Var eval(Tape& t, const SdfInputs& in, MlpTrace* trace = nullptr) const;
  // ds/dx_c (N x 3) by forward tangents through the MLP and the hash grid;
  // the feature input is held fixed. `trace` must come from eval().
  Var spatial_gradient(Tape& t, const SdfInputs& in, const MlpTrace& trace, const HashGrid& grid) const;

  [[nodiscard]] const Mlp& mlp() const { return mlp_; }
  [[nodiscard]] const SdfConfig& config() const { return cfg_; }
  [[nodiscard]] int geo_dims() const { return geo_dims_; }
  [[nodiscard]] static const char* density_segment() { return "density.log_b"; }

 private:
  SdfConfig cfg_;
  int hash_width_ = 0;
  int identity_dims_ = 0;
  int geo_dims_ = 0;
  Mlp mlp_;
};

// n_c = g / |g|; DegenerateError for |g| < 1e-8.
Var sdf_normal(Tape& t, Var gradient);

// sigma = (1/b)(1/2 + 1/2 sign(s)(exp(-|s|/b) - 1)), b = exp(log_b).
double sdf_to_density(double s, double b);
Var sdf_to_density(Tape& t, Var s, Var log_b);

}  // namespace avatarfield

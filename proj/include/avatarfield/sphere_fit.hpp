#pragma once

#include <cstdint>

#include "avatarfield/encodings.hpp"
#include "avatarfield/geometry.hpp"
#include "avatarfield/losses.hpp"

namespace avatarfield {

// SDF-only fit of an analytic sphere: Eikonal on uniform box points plus the
// occupancy BCE of each point, no rendering.
struct SphereFitConfig {
  double radius = 0.3;
  double box_half_extent = 0.6;
  int iterations = 2000;
  int batch = 256;
  double learning_rate = 1e-3;
  double eikonal_weight = 0.1;
  double bce_weight = 1e-2;
  double rho = 50.0;
  int eval_points = 10000;
  std::uint64_t seed = 0;
  HashGridConfig hash{};
  SdfConfig sdf{};
};

struct SphereFitResult {
  double mean_gradient_deviation = 0.0;  // mean | |grad F| - 1 | on eval points
  double mean_abs_error = 0.0;           // mean |F - (|x| - r)|
  double seconds = 0.0;
};

SphereFitResult fit_sphere(const SphereFitConfig& cfg);

}  // namespace avatarfield

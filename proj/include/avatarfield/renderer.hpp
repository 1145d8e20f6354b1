#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "avatarfield/body.hpp"
#include "avatarfield/camera.hpp"
#include "avatarfield/encodings.hpp"

namespace avatarfield {

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double near = 0.0;
  double far = 0.0;
  bool hit = false;  // false: misses the box, background
  int pixel_x = 0;
  int pixel_y = 0;
};

// Slab test; returns false when the ray misses the box or the box is behind it.
bool intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Box& box, double& near, double& far);

// One ray per pixel of the size x size patch whose top-left pixel is
// (x0, y0), clipped against `box`.
std::vector<Ray> generate_patch_rays(const Camera& cam, int x0, int y0, int size, const Box& box);

// One depth per equal-length bin of [near, far]; jitter in [0,1) per bin,
// nullptr for bin midpoints.
std::vector<double> stratified_coarse(double near, double far, int n, std::mt19937_64* rng);

// Inverse-CDF samples of the piecewise-constant density given by `weights`
// over equal bins of [near, far]; stratified when every weight is zero.
std::vector<double> importance_fine(double near, double far, const std::vector<double>& weights, int n,
                                    std::mt19937_64* rng);

// Ray layout for compositing: row r lists the sample rows of ray r in depth
// order together with the segment lengths delta.
struct RayLayout {
  int rays = 0;
  int samples = 0;
  std::vector<std::int32_t> index;  // rays x samples
  std::vector<double> delta;        // rays x samples
};

// Length of the cell each sample stands for: bounded by the midpoints to its
// neighbours, with the first and last cells reaching near and far.
std::vector<double> segment_lengths(const std::vector<double>& depths, double near, double far);

// Volume rendering: per ray [C (3), M]. sigma: S x 1, color: S x 3 sample rows.
Var composite(Tape& t, Var sigma, Var color, const RayLayout& layout);
// Same without colors: returns rays x 1 accumulated mask.
Var composite_mask(Tape& t, Var sigma, const RayLayout& layout);

// Per-sample weights T_k alpha_k of every ray (values only).
std::vector<double> composite_weights(const Mat& sigma, const RayLayout& layout);

}  // namespace avatarfield

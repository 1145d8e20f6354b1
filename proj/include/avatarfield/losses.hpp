#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "avatarfield/autodiff/ops.hpp"

namespace avatarfield {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct LossWeights {
  double color = 10.0;
  double perceptual = 0.5;
  double mask = 1e-3;
  double normal_omega = 1e-2;
  double normal_vertex = 1e-5;
  double eikonal = 1e-1;
  double bce = 1e-4;
  double displacement = 1e-2;
  double rho_base = 50.0;
  double rho_period = 1000.0;

  // rho = rho_base (1 + iter / rho_period)
  [[nodiscard]] double rho(int iteration) const { return rho_base * (1.0 + iteration / rho_period); }
  void validate() const;
};

// Frozen two-layer random 3x3 conv (3 -> 8 -> 8, ReLU between) standing in
// for a pretrained perceptual network; compares feature maps by mean squared
// difference.
class PerceptualProxy {
 public:
  explicit PerceptualProxy(std::uint64_t seed = 0x5eed);
  // pred: (size*size) x 3 patch on the tape, gt: same shape.
  Var loss(Tape& t, Var pred, const Mat& gt, int size) const;
  [[nodiscard]] Mat features(const Mat& patch, int size) const;

 private:
  Mat w1_, w2_;
};

// lambda_C mean|pred - gt| + lambda_VGG proxy. Optional outputs receive the
// two weighted parts.
Var color_loss(Tape& t, Var pred, const Mat& gt, int size, const LossWeights& w, const PerceptualProxy& proxy,
               Var* l1_part = nullptr, Var* perceptual_part = nullptr);
// lambda_M sum (M - label)^2
Var mask_loss(Tape& t, Var mask, const Mat& labels, double lambda);
// sum |a - b|^2 over rows
Var normal_smoothness(Tape& t, Var n_a, Var n_b);
// sum (|g| - 1)^2 over rows
Var eikonal_loss(Tape& t, Var gradient);
// sum BCE(sigmoid(-rho s_min), label), computed as softplus(z) - label z
Var min_sdf_bce(Tape& t, Var s_min, const Mat& labels, double rho);
// sum of row norms over every displacement batch
Var displacement_loss(Tape& t, const std::vector<Var>& displacements);

// Weighted values of every term of one training step.
struct LossReport {
  int iteration = 0;
  bool warmup = false;
  double color = 0.0;
  double perceptual = 0.0;
  double mask = 0.0;
  double normal_omega = 0.0;
  double normal_vertex = 0.0;
  double eikonal = 0.0;
  double bce = 0.0;
  double displacement = 0.0;
  double total = 0.0;

  [[nodiscard]] double sum() const {
    return color + perceptual + mask + normal_omega + normal_vertex + eikonal + bce + displacement;
  }
  [[nodiscard]] bool finite() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

}  // namespace avatarfield

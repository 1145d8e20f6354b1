#pragma once

#include <vector>

#include <Eigen/Dense>

#include "avatarfield/body.hpp"
#include "avatarfield/encodings.hpp"
#include "avatarfield/nn.hpp"

namespace avatarfield {

// Rigid transforms of the J bones plus the identity background bone.
struct BoneSet {
  std::vector<Eigen::Matrix4d> transforms;  // J + 1, last is identity

  static BoneSet from_body(const PosedBody& body);
  [[nodiscard]] int size() const { return static_cast<int>(transforms.size()); }
};

// Blend sum_i w_i B_i per row; w is N x (J+1).
Eigen::Matrix4d blend_transform(const BoneSet& bones, const Eigen::Ref<const Eigen::RowVectorXd>& w);

// x_c = (sum_i w_b^i B_t^i)^-1 x_t, without the displacement. Throws
// DegenerateError when the blended 3x3 block has condition number > max_cond.
Mat inverse_blend(const Mat& x_t, const Mat& w_b, const BoneSet& bones, double max_cond = 1e8);

// x_o = sum_i w_i B_i x_c + delta, differentiable in w, x_c and delta.
Var forward_skin(Tape& t, Var w, Var x_c, Var delta, const BoneSet& bones);

// normalize(sum_i w_i R_i n), differentiable in w and n. Throws
// DegenerateError when the blended vector is shorter than 1e-8.
Var transport_normal(Tape& t, Var w, Var n, const BoneSet& bones);

// softmax(logits + log max(w_init, floor)) over every row.
Var forward_weights(Tape& t, Var logits, const Mat& w_init, double floor = 1e-9);

struct DeformationConfig {
  int identity_dims = 16;
  int width = 128;
  int layers = 4;
  FourierConfig position_encoding{6, true};
  double tau = 0.1;
};

// Residual displacement F_d(gamma(x), l_idt, theta) and forward weight field
// F_w(phi(x_c), l_idt); both start as zero maps.
class DeformationField {
 public:
  DeformationField() = default;
  DeformationField(DeformationConfig cfg, int joints, int hash_width);

  void allocate(ad::ParamStore& store) const;

  // x: N x 3, identity: 1 x D, pose: 1 x 3J (rotations only).
  Var displacement(Tape& t, Var x, Var identity, const Mat& pose) const;
  // hash: N x H, identity: 1 x D -> N x (J+1) logits.
  Var weight_logits(Tape& t, Var hash, Var identity) const;

  [[nodiscard]] const DeformationConfig& config() const { return cfg_; }
  [[nodiscard]] const Mlp& displacement_net() const { return disp_; }
  [[nodiscard]] const Mlp& weight_net() const { return weights_; }

 private:
  DeformationConfig cfg_;
  int joints_ = 0;
  Mlp disp_;
  Mlp weights_;
};

// Rotation part of a pose flattened to 1 x 3J.
Mat pose_features(const Mat& theta);

}  // namespace avatarfield

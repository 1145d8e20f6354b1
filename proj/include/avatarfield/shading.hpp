#pragma once

#include "avatarfield/encodings.hpp"
#include "avatarfield/nn.hpp"

namespace avatarfield {

struct ShadingConfig {
  int width = 64;
  int layers = 3;
  FourierConfig direction_encoding{4, false};
  FourierConfig pose_encoding{4, false};
};

// alpha = 2 sigmoid(F_l(gamma(v), gamma(theta_t), n_t, l_idt, L)); the output
// layer starts at zero so alpha = 1.
class ShadingNetwork {
 public:
  ShadingNetwork() = default;
  ShadingNetwork(ShadingConfig cfg, int joints, int identity_dims, int illumination_dims);

  void allocate(ad::ParamStore& store) const;
  // view: N x 3 unit directions, pose: 1 x 3J, normal: N x 3, identity: 1 x D,
  // illumination: 1 x 4C. Returns N x 1.
  Var shade(Tape& t, Var view, const Mat& pose, Var normal, Var identity, Var illumination) const;

  [[nodiscard]] const Mlp& mlp() const { return mlp_; }

 private:
  ShadingConfig cfg_;
  Mlp mlp_;
};

// c_t = clamp(alpha * c_o, 0, 1); alpha is N x 1, c_o N x 3.
Var modulate(Tape& t, Var color, Var alpha);

}  // namespace avatarfield

#include "avatarfield/shading.hpp"

namespace avatarfield {

ShadingNetwork::ShadingNetwork(ShadingConfig cfg, int joints, int identity_dims, int illumination_dims) : cfg_(cfg) {
  MlpSpec s;
  s.name = "shading";
  s.in = 3 * cfg.direction_encoding.width_per_scalar() + 3 * joints * cfg.pose_encoding.width_per_scalar() + 3 +
         identity_dims + illumination_dims;
  s.width = cfg.width;
  s.layers = cfg.layers;
  s.out = 1;
  s.zero_last = true;
  mlp_ = Mlp(s);
}

void ShadingNetwork::allocate(ad::ParamStore& store) const { mlp_.allocate(store); }

Var ShadingNetwork::shade(Tape& t, Var view, const Mat& pose, Var normal, Var identity, Var illumination) const {
  const auto N = t.value(view).rows();
  const Mat pose_code = fourier_features(pose, cfg_.pose_encoding);
  const Var parts[] = {fourier_encode(t, view, cfg_.direction_encoding), t.constant(pose_code.replicate(N, 1)), normal,
                       ad::tile_rows(t, identity, N), ad::tile_rows(t, illumination, N)};
  return ad::scale(t, ad::sigmoid(t, mlp_.forward(t, ad::concat_cols(t, parts))), 2.0);
}

Var modulate(Tape& t, Var color, Var alpha) { return ad::clamp(t, ad::mul_col(t, color, alpha), 0.0, 1.0); }

}  // namespace avatarfield

#include "avatarfield/losses.hpp"

#include <cmath>
#include <random>

#include "avatarfield/appearance.hpp"
#include "avatarfield/errors.hpp"

namespace avatarfield {

void LossWeights::validate() const {
  for (double v : {color, perceptual, mask, normal_omega, normal_vertex, eikonal, bce, displacement}) {
    if (!(v >= 0.0)) throw ValidationError("loss weights must be nonnegative");
  }
  if (!(rho_base > 0.0) || !(rho_period > 0.0)) throw ValidationError("rho schedule must be positive");
}

PerceptualProxy::PerceptualProxy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  w1_.resize(8, 27);
  w2_.resize(8, 72);
  for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = n(rng) / std::sqrt(27.0);
  for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_.data()[i] = n(rng) / std::sqrt(72.0);
}

namespace {

Var proxy_features(Tape& t, Var patch, int size, const Mat& w1, const Mat& w2) {
  Var h = ad::relu(t, ad::matmul_nt(t, im2col3x3(t, patch, size, size, 1), t.constant(w1)));
  return ad::matmul_nt(t, im2col3x3(t, h, size, size, 1), t.constant(w2));
}

}  // namespace

Mat PerceptualProxy::features(const Mat& patch, int size) const {
  Tape t;
  return t.value(proxy_features(t, t.constant(patch), size, w1_, w2_));
}

Var PerceptualProxy::loss(Tape& t, Var pred, const Mat& gt, int size) const {
  const Var fp = proxy_features(t, pred, size, w1_, w2_);
  const Var fg = t.constant(features(gt, size));
  return ad::mean(t, ad::square(t, ad::sub(t, fp, fg)));
}

Var color_loss(Tape& t, Var pred, const Mat& gt, int size, const LossWeights& w, const PerceptualProxy& proxy,
               Var* l1_part, Var* perceptual_part) {
  const Mat& p = t.value(pred);
  if (p.rows() != gt.rows() || p.cols() != gt.cols() || p.rows() != static_cast<Eigen::Index>(size) * size) {
    throw ContractError("color loss: prediction and target patches differ in shape");
  }
  const Var l1 = ad::scale(t, ad::mean(t, ad::abs(t, ad::sub(t, pred, t.constant(gt)))), w.color);
  const Var vgg = ad::scale(t, proxy.loss(t, pred, gt, size), w.perceptual);
  if (l1_part != nullptr) *l1_part = l1;
  if (perceptual_part != nullptr) *perceptual_part = vgg;
  return ad::add(t, l1, vgg);
}

Var mask_loss(Tape& t, Var mask, const Mat& labels, double lambda) {
  return ad::scale(t, ad::sum(t, ad::square(t, ad::sub(t, mask, t.constant(labels)))), lambda);
}

Var normal_smoothness(Tape& t, Var n_a, Var n_b) { return ad::sum(t, ad::square(t, ad::sub(t, n_a, n_b))); }

Var eikonal_loss(Tape& t, Var gradient) {
  return ad::sum(t, ad::square(t, ad::add_scalar(t, ad::row_norm(t, gradient), -1.0)));
}

Var min_sdf_bce(Tape& t, Var s_min, const Mat& labels, double rho) {
  if (!(rho > 0.0)) throw ContractError("bce: rho must be positive");
  const Var z = ad::scale(t, s_min, -rho);
  return ad::sum(t, ad::sub(t, ad::softplus(t, z, 1.0), ad::mul(t, t.constant(labels), z)));
}

Var displacement_loss(Tape& t, const std::vector<Var>& displacements) {
  Var total = t.scalar(0.0);
  for (Var d : displacements) total = ad::add(t, total, ad::sum(t, ad::row_norm(t, d)));
  return total;
}

bool LossReport::finite() const {
  for (double v : {color, perceptual, mask, normal_omega, normal_vertex, eikonal, bce, displacement, total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

nlohmann::json LossReport::to_json() const {
  return {{"iteration", iteration}, {"warmup", warmup},           {"color", color},
          {"perceptual", perceptual}, {"mask", mask},             {"normal_omega", normal_omega},
          {"normal_vertex", normal_vertex}, {"eikonal", eikonal}, {"bce", bce},
          {"displacement", displacement}, {"total", total}};
}

}  // namespace avatarfield

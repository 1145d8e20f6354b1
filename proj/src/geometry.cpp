#include "avatarfield/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "avatarfield/errors.hpp"

namespace avatarfield {

CanonicalCoords canonical_coords(Tape& t, Var x_c, const Box& box) {
  const Eigen::Vector3d ext = box.extent();
  if (!(ext.minCoeff() > 0.0)) throw ContractError("canonical box is degenerate");
  const auto N = t.value(x_c).rows();
  CanonicalCoords c;
  c.inv_extent = ext.cwiseInverse();
  Mat lo = box.lo.transpose().replicate(N, 1);
  Mat center = box.center().transpose().replicate(N, 1);
  Mat scale = c.inv_extent.transpose().replicate(N, 1);
  c.u = ad::clamp(t, ad::mul(t, ad::sub(t, x_c, t.constant(std::move(lo))), t.constant(std::move(scale))), 0.0, 1.0);
  c.q = ad::sub(t, x_c, t.constant(std::move(center)));
  return c;
}

SdfNetwork::SdfNetwork(SdfConfig cfg, int hash_width, int identity_dims, int geo_dims)
    : cfg_(cfg), hash_width_(hash_width), identity_dims_(identity_dims), geo_dims_(geo_dims) {
  MlpSpec s;
  s.name = "sdf";
  s.in = 3 + hash_width + kShapeDims + identity_dims + geo_dims;
  s.width = cfg.width;
  s.layers = cfg.layers;
  s.out = 1;
  s.activation = Activation::Softplus;
  s.softplus_beta = cfg.softplus_beta;
  if (cfg.skip > 0 && cfg.skip < cfg.layers) s.skips = {cfg.skip};
  mlp_ = Mlp(s);
}

void SdfNetwork::allocate(ad::ParamStore& store) const {
  mlp_.allocate(store);
  store.add(density_segment(), 1, 1, ad::Init::Constant, std::log(cfg_.density_scale_init));

  const MlpSpec& s = mlp_.spec();
  std::normal_distribution<double> unit(0.0, 1.0);
  auto& rng = store.rng();
  for (int l = 0; l < s.layers; ++l) {
    const ad::Segment& seg = store.segment(s.weight(l));
    auto w = Eigen::Map<Mat>(store.view(s.weight(l)).data(), static_cast<Eigen::Index>(seg.rows),
                             static_cast<Eigen::Index>(seg.cols));
    auto b = store.view(s.bias(l));
    const double out_dim = static_cast<double>(seg.rows);
    if (l == s.layers - 1) {
      const double mu = std::sqrt(std::numbers::pi) / std::sqrt(static_cast<double>(seg.cols));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = mu + 1e-4 * unit(rng);
      b[0] = -cfg_.init_radius;
      continue;
    }
    const double sd = std::sqrt(2.0) / std::sqrt(out_dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * unit(rng);
    std::fill(b.begin(), b.end(), 0.0);
    // Only the q columns of the raw input carry signal at initialization.
    if (l == 0) w.rightCols(w.cols() - 3).setZero();
    if (s.is_skip(l)) w.rightCols(s.in - 3).setZero();
  }
}

Var SdfNetwork::eval(Tape& t, const SdfInputs& in, MlpTrace* trace) const {
  const auto N = t.value(in.coords.q).rows();
  if (in.beta.cols() != kShapeDims) throw ContractError("sdf: beta must be 1 x 10");
  const Var geo = in.geo.valid() ? in.geo : ad::zeros(t, N, geo_dims_);
  const Var parts[] = {in.coords.q, in.hash, t.constant(in.beta.replicate(N, 1)), ad::tile_rows(t, in.identity, N),
                       geo};
  return mlp_.forward(t, ad::concat_cols(t, parts), trace);
}

Var SdfNetwork::spatial_gradient(Tape& t, const SdfInputs& in, const MlpTrace& trace, const HashGrid& grid) const {
  const Mat& u = t.value(in.coords.u);
  const auto N = u.rows();
  // du/dx_c is diag(1/extent) except where the clamp is active.
  Mat chain(3 * N, 1);
  Mat dq = Mat::Zero(3 * N, 3);
  for (int d = 0; d < 3; ++d) {
    for (Eigen::Index n = 0; n < N; ++n) {
      const double v = u(n, d);
      chain(d * N + n, 0) = (v == 0.0 || v == 1.0) ? 0.0 : in.coords.inv_extent[d];
      dq(d * N + n, d) = 1.0;
    }
  }
  const Var dhash = ad::mul_col(t, grid.jacobian(t, in.coords.u), t.constant(std::move(chain)));
  const Var parts[] = {t.constant(std::move(dq)), dhash,
                       ad::zeros(t, 3 * N, mlp_.spec().in - 3 - hash_width_)};
  const Var ds = mlp_.tangent(t, ad::concat_cols(t, parts), trace);
  return ad::stacked_to_cols(t, ds, 3);
}

Var sdf_normal(Tape& t, Var gradient) { return ad::normalize_rows(t, gradient, 1e-8); }

double sdf_to_density(double s, double b) {
  const double sign = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
  return (0.5 + 0.5 * sign * (std::exp(-std::abs(s) / b) - 1.0)) / b;
}

Var sdf_to_density(Tape& t, Var s, Var log_b) {
  const double b = std::exp(t.scalar_value(log_b));
  Mat out = t.value(s).unaryExpr([b](double v) { return sdf_to_density(v, b); });
  return t.record(ad::OpKind::Custom, {s.id, log_b.id}, std::move(out), [s, log_b, b](Tape& tp, std::int32_t self) {
    const Mat& sv = tp.value(s);
    const Mat& sig = tp.value(self);
    const Mat& g = tp.grad(self);
    const bool gs = tp.requires_grad(s), gb = tp.requires_grad(log_b);
    double acc_b = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double x = sv.data()[i];
      const double sigma = sig.data()[i];
      double ds, db;
      if (x > 0.0) {
        ds = -sigma / b;
        db = sigma * (x / b - 1.0) / b;
      } else {
        const double e = std::exp(x / b);
        ds = -0.5 * e / (b * b);
        db = -1.0 / (b * b) + 0.5 * e * (1.0 + x / b) / (b * b);
      }
      if (gs) tp.grad(s).data()[i] += g.data()[i] * ds;
      acc_b += g.data()[i] * db * b;
    }
    if (gb) tp.grad(log_b)(0, 0) += acc_b;
  });
}

}  // namespace avatarfield

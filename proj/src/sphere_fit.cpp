#include "avatarfield/sphere_fit.hpp"

#include <chrono>
#include <random>

#include "avatarfield/autodiff/adam.hpp"
#include "avatarfield/autodiff/param_store.hpp"

namespace avatarfield {

namespace {

Mat box_points(std::mt19937_64& rng, int n, double half) {
  std::uniform_real_distribution<double> u(-half, half);
  Mat x(n, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

}  // namespace

SphereFitResult fit_sphere(const SphereFitConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const HashGrid grid(cfg.hash, "hashgrid");
  // one zero identity and geometry column stand in for the unused inputs
  const SdfNetwork sdf(cfg.sdf, cfg.hash.output_width(), 1, 1);
  ad::ParamStore store(cfg.seed);
  grid.allocate(store);
  sdf.allocate(store);
  ad::AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  ad::Adam adam(store.size(), ac);
  const Box box{Eigen::Vector3d::Constant(-cfg.box_half_extent), Eigen::Vector3d::Constant(cfg.box_half_extent)};
  const Mat beta = Mat::Zero(1, kShapeDims);
  std::mt19937_64 rng(cfg.seed + 1);

  auto forward = [&](Tape& t, const Mat& x, Var& s) {
    const CanonicalCoords c = canonical_coords(t, t.constant(x), box);
    const SdfInputs in{c, grid.encode(t, c.u), beta, ad::zeros(t, 1, 1), Var{}};
    MlpTrace trace;
    s = sdf.eval(t, in, &trace);
    return sdf.spatial_gradient(t, in, trace, grid);
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    const Mat x = box_points(rng, cfg.batch, cfg.box_half_extent);
    Mat labels(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) labels(i, 0) = x.row(i).norm() < cfg.radius ? 1.0 : 0.0;
    Tape t(&store);
    Var s;
    const Var g = forward(t, x, s);
    const Var loss = ad::add(t, ad::scale(t, eikonal_loss(t, g), cfg.eikonal_weight),
                             ad::scale(t, min_sdf_bce(t, s, labels, cfg.rho), cfg.bce_weight));
    adam.step(store.values(), t.gradient(loss));
  }

  std::mt19937_64 eval_rng(cfg.seed + 2);
  const Mat x = box_points(eval_rng, cfg.eval_points, cfg.box_half_extent);
  Tape t(&store);
  Var s;
  const Mat g = t.value(forward(t, x, s));
  SphereFitResult r;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    r.mean_gradient_deviation += std::abs(g.row(i).norm() - 1.0);
    r.mean_abs_error += std::abs(t.value(s)(i, 0) - (x.row(i).norm() - cfg.radius));
  }
  r.mean_gradient_deviation /= static_cast<double>(x.rows());
  r.mean_abs_error /= static_cast<double>(x.rows());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace avatarfield

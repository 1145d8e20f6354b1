#include "avatarfield/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avatarfield/errors.hpp"

namespace avatarfield {

bool intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Box& box, double& near, double& far) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int d = 0; d < 3; ++d) {
    if (std::abs(dir[d]) < 1e-15) {
      if (origin[d] < box.lo[d] || origin[d] > box.hi[d]) return false;
      continue;
    }
    double a = (box.lo[d] - origin[d]) / dir[d];
    double b = (box.hi[d] - origin[d]) / dir[d];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (!(t0 < t1)) return false;
  near = t0;
  far = t1;
  return true;
}

std::vector<Ray> generate_patch_rays(const Camera& cam, int x0, int y0, int size, const Box& box) {
  if (size <= 0 || x0 < 0 || y0 < 0 || x0 + size > cam.width || y0 + size > cam.height) {
    throw ContractError("patch does not fit inside the image");
  }
  if (!(box.extent().minCoeff() > 0.0)) throw ContractError("ray box is degenerate");
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(size) * size);
  const Eigen::Vector3d o = cam.center();
  for (int y = y0; y < y0 + size; ++y) {
    for (int x = x0; x < x0 + size; ++x) {
      Ray r;
      r.origin = o;
      r.direction = cam.ray_direction(x, y);
      r.pixel_x = x;
      r.pixel_y = y;
      r.hit = intersect_box(o, r.direction, box, r.near, r.far);
      rays.push_back(r);
    }
  }
  return rays;
}

std::vector<double> stratified_coarse(double near, double far, int n, std::mt19937_64* rng) {
  if (!(near < far) || n <= 0) throw ContractError("stratified sampling needs near < far and n > 0");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(n));
  const double step = (far - near) / n;
  for (int k = 0; k < n; ++k) t[static_cast<std::size_t>(k)] = near + (k + (rng ? u(*rng) : 0.5)) * step;
  return t;
}

std::vector<double> importance_fine(double near, double far, const std::vector<double>& weights, int n,
                                    std::mt19937_64* rng) {
  const auto bins = weights.size();
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ContractError("importance sampling weights must be nonnegative");
    total += w;
  }
  if (bins == 0 || !(total > 0.0)) return stratified_coarse(near, far, n, rng);
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t k = 0; k < bins; ++k) cdf[k + 1] = cdf[k] + weights[k] / total;
  cdf[bins] = 1.0;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double step = (far - near) / static_cast<double>(bins);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double u = (j + (rng ? uni(*rng) : 0.5)) / n;
    // first bin whose upper cdf exceeds u, skipping empty bins
    auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()) - 1, bins - 1);
    while (weights[k] == 0.0 && k + 1 < bins) ++k;
    while (weights[k] == 0.0 && k > 0) --k;
    const double span = cdf[k + 1] - cdf[k];
    const double f = span > 0.0 ? std::clamp((u - cdf[k]) / span, 0.0, 1.0) : 0.5;
    out[static_cast<std::size_t>(j)] = near + (static_cast<double>(k) + f) * step;
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> segment_lengths(const std::vector<double>& depths, double near, double far) {
  // sample k owns the cell between the midpoints to its neighbours
  std::vector<double> d(depths.size());
  for (std::size_t k = 0; k < depths.size(); ++k) {
    const double lo = k == 0 ? near : 0.5 * (depths[k - 1] + depths[k]);
    const double hi = k + 1 < depths.size() ? 0.5 * (depths[k] + depths[k + 1]) : far;
    if (depths[k] < near || depths[k] > far || hi < lo) throw ContractError("sample depths must be ascending in [near, far]");
    d[k] = hi - lo;
  }
  return d;
}

namespace {

void check_layout(const RayLayout& layout, Eigen::Index rows) {
  const auto n = static_cast<std::size_t>(layout.rays) * static_cast<std::size_t>(layout.samples);
  if (layout.index.size() != n || layout.delta.size() != n) throw ContractError("ray layout size mismatch");
  for (auto i : layout.index) {
    if (i < 0 || i >= rows) throw ContractError("ray layout refers to a missing sample row");
  }
}

Var composite_impl(Tape& t, Var sigma, Var color, const RayLayout& layout) {
  const Mat& s = t.value(sigma);
  check_layout(layout, s.rows());
  const bool with_color = color.valid();
  const Eigen::Index width = with_color ? 4 : 1;
  Mat out = Mat::Zero(layout.rays, width);
  const std::size_t S = static_cast<std::size_t>(layout.samples);
  for (int r = 0; r < layout.rays; ++r) {
    double T = 1.0;
    for (std::size_t k = 0; k < S; ++k) {
      const std::size_t idx = static_cast<std::size_t>(r) * S + k;
      const auto row = layout.index[idx];
      const double a = 1.0 - std::exp(-s(row, 0) * layout.delta[idx]);
      const double w = T * a;
      if (with_color) {
        out.block(r, 0, 1, 3) += w * t.value(color).row(row);
        out(r, 3) += w;
      } else {
        out(r, 0) += w;
      }
      T *= 1.0 - a;
    }
  }
  std::vector<std::int32_t> inputs{sigma.id};
  if (with_color) inputs.push_back(color.id);
  return t.record(ad::OpKind::Custom, std::move(inputs), std::move(out),
                  [sigma, color, with_color, layout](Tape& tp, std::int32_t self) {
                    const Mat& s = tp.value(sigma);
                    const Mat& g = tp.grad(self);
                    const bool gs = tp.requires_grad(sigma), gc = with_color && tp.requires_grad(color);
                    const std::size_t S = static_cast<std::size_t>(layout.samples);
                    std::vector<double> alpha(S), trans(S);
                    for (int r = 0; r < layout.rays; ++r) {
                      double T = 1.0;
                      for (std::size_t k = 0; k < S; ++k) {
                        const std::size_t idx = static_cast<std::size_t>(r) * S + k;
                        alpha[k] = 1.0 - std::exp(-s(layout.index[idx], 0) * layout.delta[idx]);
                        trans[k] = T;
                        T *= 1.0 - alpha[k];
                      }
                      // tail = sum_{k>j} alpha_k g.v_k prod_{j<m<k} (1 - alpha_m)
                      double tail = 0.0;
                      for (std::size_t k = S; k-- > 0;) {
                        const std::size_t idx = static_cast<std::size_t>(r) * S + k;
                        const auto row = layout.index[idx];
                        double gv;
                        if (with_color) {
                          gv = g.row(r).head(3).dot(tp.value(color).row(row)) + g(r, 3);
                          if (gc) tp.grad(color).row(row) += trans[k] * alpha[k] * g.row(r).head(3);
                        } else {
                          gv = g(r, 0);
                        }
                        if (gs) {
                          const double d_alpha = trans[k] * (gv - tail);
                          tp.grad(sigma)(row, 0) += d_alpha * layout.delta[idx] * (1.0 - alpha[k]);
                        }
                        tail = alpha[k] * gv + (1.0 - alpha[k]) * tail;
                      }
                    }
                  });
}

}  // namespace

Var composite(Tape& t, Var sigma, Var color, const RayLayout& layout) {
  if (!color.valid() || t.value(color).cols() != 3 || t.value(color).rows() != t.value(sigma).rows()) {
    throw ContractError("composite: colors must be S x 3");
  }
  return composite_impl(t, sigma, color, layout);
}

Var composite_mask(Tape& t, Var sigma, const RayLayout& layout) { return composite_impl(t, sigma, Var{}, layout); }

std::vector<double> composite_weights(const Mat& sigma, const RayLayout& layout) {
  check_layout(layout, sigma.rows());
  std::vector<double> w(layout.index.size());
  const std::size_t S = static_cast<std::size_t>(layout.samples);
  for (int r = 0; r < layout.rays; ++r) {
    double T = 1.0;
    for (std::size_t k = 0; k < S; ++k) {
      const std::size_t idx = static_cast<std::size_t>(r) * S + k;
      const double a = 1.0 - std::exp(-sigma(layout.index[idx], 0) * layout.delta[idx]);
      w[idx] = T * a;
      T *= 1.0 - a;
    }
  }
  return w;
}

}  // namespace avatarfield

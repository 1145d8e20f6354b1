#include "avatarfield/encodings.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "avatarfield/errors.hpp"

namespace avatarfield {

Mat fourier_features(const Mat& x, const FourierConfig& cfg) {
  const int w = cfg.width_per_scalar();
  Mat out(x.rows(), x.cols() * w);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double v = x(n, c);
      Eigen::Index k = c * w;
      if (cfg.include_input) out(n, k++) = v;
      double a = std::numbers::pi;
      for (int l = 0; l < cfg.bands; ++l, a *= 2.0) {
        out(n, k++) = std::sin(a * v);
        out(n, k++) = std::cos(a * v);
      }
    }
  }
  return out;
}

Var fourier_encode(Tape& t, Var x, const FourierConfig& cfg) {
  Mat out = fourier_features(t.value(x), cfg);
  return t.record(ad::OpKind::Custom, {x.id}, std::move(out), [x, cfg](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& xv = tp.value(x);
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    const int w = cfg.width_per_scalar();
    for (Eigen::Index n = 0; n < xv.rows(); ++n) {
      for (Eigen::Index c = 0; c < xv.cols(); ++c) {
        Eigen::Index k = c * w;
        double acc = 0.0;
        if (cfg.include_input) acc += g(n, k++);
        double a = std::numbers::pi;
        for (int l = 0; l < cfg.bands; ++l, a *= 2.0, k += 2) {
          // d sin = a cos, d cos = -a sin
          acc += a * (g(n, k) * y(n, k + 1) - g(n, k + 1) * y(n, k));
        }
        gx(n, c) += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Hash grid

int HashGridConfig::resolution(int level) const {
  return static_cast<int>(std::floor(base_resolution * std::pow(per_level_scale, level)));
}

std::int64_t HashGrid::vertex_index(int level, std::int64_t x, std::int64_t y, std::int64_t z) const {
  const std::int64_t side = cfg_.resolution(level) + 1;
  const std::int64_t T = cfg_.table_size();
  if (side * side * side <= T) return x + side * (y + side * z);
  const std::uint64_t h = static_cast<std::uint64_t>(x) * 2654435761ULL ^ static_cast<std::uint64_t>(y) * 805459861ULL ^
                          static_cast<std::uint64_t>(z) * 3674653429ULL;
  return static_cast<std::int64_t>(h % static_cast<std::uint64_t>(T));
}

void HashGrid::allocate(ad::ParamStore& store, double init_scale) const {
  store.add(segment_, static_cast<std::size_t>(cfg_.levels * cfg_.table_size()),
            static_cast<std::size_t>(cfg_.features_per_level), ad::Init::Uniform, init_scale);
}

namespace {

// Corner rows and local coordinates of every (point, level) cell.
struct GridLookup {
  int levels = 0;
  std::vector<std::int64_t> rows;  // (n * levels + l) * 8 + corner
  std::vector<double> frac;        // (n * levels + l) * 3 + d
  std::vector<double> res;         // per level

  [[nodiscard]] std::size_t cell(Eigen::Index n, int l) const { return static_cast<std::size_t>(n) * levels + l; }

  // Trilinear weight of a corner and its first/second partials in u.
  [[nodiscard]] double weight(std::size_t c, int corner) const {
    double w = 1.0;
    for (int d = 0; d < 3; ++d) w *= factor(c, corner, d);
    return w;
  }
  [[nodiscard]] double factor(std::size_t c, int corner, int d) const {
    const double f = frac[c * 3 + d];
    return (corner >> d & 1) ? f : 1.0 - f;
  }
  [[nodiscard]] double d_weight(std::size_t c, int corner, int d, double r) const {
    double w = (corner >> d & 1) ? r : -r;
    for (int e = 0; e < 3; ++e) {
      if (e != d) w *= factor(c, corner, e);
    }
    return w;
  }
  [[nodiscard]] double dd_weight(std::size_t c, int corner, int d, int e, double r) const {
    if (d == e) return 0.0;
    const int o = 3 - d - e;
    const double sd = (corner >> d & 1) ? r : -r;
    const double se = (corner >> e & 1) ? r : -r;
    return sd * se * factor(c, corner, o);
  }
};

GridLookup lookup(Tape& t, const HashGrid& grid, const Mat& u) {
  const HashGridConfig& cfg = grid.config();
  GridLookup lk;
  lk.levels = cfg.levels;
  const auto N = u.rows();
  std::vector<std::int32_t> cells(static_cast<std::size_t>(N) * cfg.levels * 3);
  lk.res.resize(static_cast<std::size_t>(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l) lk.res[static_cast<std::size_t>(l)] = cfg.resolution(l);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int l = 0; l < cfg.levels; ++l) {
      const double r = lk.res[static_cast<std::size_t>(l)];
      for (int d = 0; d < 3; ++d) {
        const double p = u(n, d) * r;
        const auto i = static_cast<std::int32_t>(std::clamp(std::floor(p), 0.0, r - 1.0));
        cells[lk.cell(n, l) * 3 + static_cast<std::size_t>(d)] = i;
      }
    }
  }
  t.sync(cells);
  lk.rows.resize(static_cast<std::size_t>(N) * cfg.levels * 8);
  lk.frac.resize(static_cast<std::size_t>(N) * cfg.levels * 3);
  const std::int64_t T = cfg.table_size();
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int l = 0; l < cfg.levels; ++l) {
      const std::size_t c = lk.cell(n, l);
      const double r = lk.res[static_cast<std::size_t>(l)];
      std::array<std::int64_t, 3> base{};
      for (int d = 0; d < 3; ++d) {
        base[static_cast<std::size_t>(d)] = cells[c * 3 + static_cast<std::size_t>(d)];
        lk.frac[c * 3 + static_cast<std::size_t>(d)] = u(n, d) * r - static_cast<double>(base[static_cast<std::size_t>(d)]);
      }
      for (int corner = 0; corner < 8; ++corner) {
        lk.rows[c * 8 + static_cast<std::size_t>(corner)] =
            l * T + grid.vertex_index(l, base[0] + (corner & 1), base[1] + (corner >> 1 & 1), base[2] + (corner >> 2 & 1));
      }
    }
  }
  return lk;
}

void check_unit_points(const Mat& u) {
  if (u.cols() != 3) throw ContractError("hash grid expects N x 3 points");
}

}  // namespace

Var HashGrid::encode(Tape& t, Var u) const {
  check_unit_points(t.value(u));
  Var table = t.parameter(segment_);
  const Mat& tv = t.value(table);
  const int F = cfg_.features_per_level;
  const auto N = t.value(u).rows();
  GridLookup lk = lookup(t, *this, t.value(u));
  Mat out = Mat::Zero(N, cfg_.output_width());
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int l = 0; l < cfg_.levels; ++l) {
      const std::size_t c = lk.cell(n, l);
      for (int corner = 0; corner < 8; ++corner) {
        const double w = lk.weight(c, corner);
        const auto row = lk.rows[c * 8 + static_cast<std::size_t>(corner)];
        for (int f = 0; f < F; ++f) out(n, l * F + f) += w * tv(row, f);
      }
    }
  }
  return t.record(ad::OpKind::Custom, {u.id, table.id}, std::move(out),
                  [u, table, F, levels = cfg_.levels, lk = std::move(lk)](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    const Mat& tv = tp.value(table);
                    const bool need_u = tp.requires_grad(u);
                    Mat* gu = need_u ? &tp.grad(u) : nullptr;
                    Mat& gt = tp.grad(table);
                    for (Eigen::Index n = 0; n < g.rows(); ++n) {
                      for (int l = 0; l < levels; ++l) {
                        const std::size_t c = lk.cell(n, l);
                        const double r = lk.res[static_cast<std::size_t>(l)];
                        for (int corner = 0; corner < 8; ++corner) {
                          const auto row = lk.rows[c * 8 + static_cast<std::size_t>(corner)];
                          const double w = lk.weight(c, corner);
                          double gdot = 0.0;
                          for (int f = 0; f < F; ++f) {
                            gt(row, f) += w * g(n, l * F + f);
                            gdot += g(n, l * F + f) * tv(row, f);
                          }
                          if (need_u) {
                            for (int d = 0; d < 3; ++d) (*gu)(n, d) += lk.d_weight(c, corner, d, r) * gdot;
                          }
                        }
                      }
                    }
                  });
}

Var HashGrid::jacobian(Tape& t, Var u) const {
  check_unit_points(t.value(u));
  Var table = t.parameter(segment_);
  const Mat& tv = t.value(table);
  const int F = cfg_.features_per_level;
  const auto N = t.value(u).rows();
  GridLookup lk = lookup(t, *this, t.value(u));
  Mat out = Mat::Zero(3 * N, cfg_.output_width());
  for (Eigen::Index n = 0; n < N; ++n) {
    for (int l = 0; l < cfg_.levels; ++l) {
      const std::size_t c = lk.cell(n, l);
      const double r = lk.res[static_cast<std::size_t>(l)];
      for (int corner = 0; corner < 8; ++corner) {
        const auto row = lk.rows[c * 8 + static_cast<std::size_t>(corner)];
        for (int d = 0; d < 3; ++d) {
          const double dw = lk.d_weight(c, corner, d, r);
          for (int f = 0; f < F; ++f) out(d * N + n, l * F + f) += dw * tv(row, f);
        }
      }
    }
  }
  return t.record(ad::OpKind::Custom, {u.id, table.id}, std::move(out),
                  [u, table, F, N, levels = cfg_.levels, lk = std::move(lk)](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    const Mat& tv = tp.value(table);
                    const bool need_u = tp.requires_grad(u);
                    Mat* gu = need_u ? &tp.grad(u) : nullptr;
                    Mat& gt = tp.grad(table);
                    for (Eigen::Index n = 0; n < N; ++n) {
                      for (int l = 0; l < levels; ++l) {
                        const std::size_t c = lk.cell(n, l);
                        const double r = lk.res[static_cast<std::size_t>(l)];
                        for (int corner = 0; corner < 8; ++corner) {
                          const auto row = lk.rows[c * 8 + static_cast<std::size_t>(corner)];
                          for (int d = 0; d < 3; ++d) {
                            const double dw = lk.d_weight(c, corner, d, r);
                            double gdot = 0.0;
                            for (int f = 0; f < F; ++f) {
                              const double gv = g(d * N + n, l * F + f);
                              gt(row, f) += dw * gv;
                              gdot += gv * tv(row, f);
                            }
                            if (need_u) {
                              for (int e = 0; e < 3; ++e) (*gu)(n, e) += lk.dd_weight(c, corner, d, e, r) * gdot;
                            }
                          }
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Keypoint encoding

Var keypoint_encode(Tape& t, Var x_o, const Mat& joints, const Camera& cam, const KeypointEncodingConfig& cfg) {
  if (!(cfg.eta > 0.0)) throw ContractError("keypoint encoding: eta must be positive");
  const Mat& x = t.value(x_o);
  if (x.cols() != 3 || joints.cols() != 3) throw ContractError("keypoint encoding expects 3-column points");
  const Eigen::Vector3d r3 = cam.R.row(2).transpose();
  const auto N = x.rows();
  const auto J = joints.rows();
  const int W = 2 * cfg.bands;
  const double inv2e2 = 1.0 / (2.0 * cfg.eta * cfg.eta);
  Mat out(N, J * W);
  for (Eigen::Index n = 0; n < N; ++n) {
    const Eigen::Vector3d p = x.row(n).transpose();
    if (!(cam.depth(p) > 0.0)) {
      throw DegenerateError("keypoint encoding: point " + std::to_string(n) + " is not in front of the camera");
    }
    for (Eigen::Index k = 0; k < J; ++k) {
      const Eigen::Vector3d d = joints.row(k).transpose() - p;
      const double w = std::exp(-d.squaredNorm() * inv2e2);
      const double delta = r3.dot(d);
      double a = std::numbers::pi;
      for (int l = 0; l < cfg.bands; ++l, a *= 2.0) {
        out(n, k * W + 2 * l) = w * std::sin(a * delta);
        out(n, k * W + 2 * l + 1) = w * std::cos(a * delta);
      }
    }
  }
  return t.record(ad::OpKind::Custom, {x_o.id}, std::move(out),
                  [x_o, joints, r3, cfg, inv2e2](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(x_o)) return;
                    const Mat& x = tp.value(x_o);
                    const Mat& g = tp.grad(self);
                    Mat& gx = tp.grad(x_o);
                    const int W = 2 * cfg.bands;
                    for (Eigen::Index n = 0; n < x.rows(); ++n) {
                      const Eigen::Vector3d p = x.row(n).transpose();
                      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                      for (Eigen::Index k = 0; k < joints.rows(); ++k) {
                        const Eigen::Vector3d d = joints.row(k).transpose() - p;
                        const double w = std::exp(-d.squaredNorm() * inv2e2);
                        const double delta = r3.dot(d);
                        // dw/dx = w d / eta^2, d delta/dx = -r3
                        const Eigen::Vector3d dw = w * 2.0 * inv2e2 * d;
                        double a = std::numbers::pi;
                        for (int l = 0; l < cfg.bands; ++l, a *= 2.0) {
                          const double s = std::sin(a * delta), c = std::cos(a * delta);
                          const double gs = g(n, k * W + 2 * l), gc = g(n, k * W + 2 * l + 1);
                          acc += (gs * s + gc * c) * dw - w * a * (gs * c - gc * s) * r3;
                        }
                      }
                      gx.row(n) += acc.transpose();
                    }
                  });
}

}  // namespace avatarfield

#include "avatarfield/appearance.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield {

Var im2col3x3(Tape& t, Var map, int width, int height, int stride) {
  const Mat& m = t.value(map);
  if (m.rows() != static_cast<Eigen::Index>(width) * height) throw ContractError("im2col: map size mismatch");
  const int ow = strided_size(width, stride), oh = strided_size(height, stride);
  const auto C = m.cols();
  std::vector<std::int32_t> src(static_cast<std::size_t>(ow) * oh * 9, -1);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int k = 0; k < 9; ++k) {
        const int sx = x * stride + k % 3 - 1, sy = y * stride + k / 3 - 1;
        if (sx >= 0 && sy >= 0 && sx < width && sy < height) {
          src[(static_cast<std::size_t>(y) * ow + x) * 9 + k] = sy * width + sx;
        }
      }
    }
  }
  Mat out = Mat::Zero(static_cast<Eigen::Index>(ow) * oh, 9 * C);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (int k = 0; k < 9; ++k) {
      const auto s = src[static_cast<std::size_t>(r) * 9 + k];
      if (s >= 0) out.block(r, k * C, 1, C) = m.row(s);
    }
  }
  return t.record(ad::OpKind::Custom, {map.id}, std::move(out), [map, C, src = std::move(src)](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(map)) return;
    const Mat& g = tp.grad(self);
    Mat& gm = tp.grad(map);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (int k = 0; k < 9; ++k) {
        const auto s = src[static_cast<std::size_t>(r) * 9 + k];
        if (s >= 0) gm.row(s) += g.block(r, k * C, 1, C);
      }
    }
  });
}

void ConvNet::allocate(ad::ParamStore& store) const {
  for (int l = 0; l < spec_.layers; ++l) {
    const int cin = l == 0 ? spec_.in_channels : spec_.hidden;
    const int cout = l == spec_.layers - 1 ? spec_.out_channels : spec_.hidden;
    const std::string p = spec_.name + ".c" + std::to_string(l);
    store.add(p + ".w", static_cast<std::size_t>(cout), static_cast<std::size_t>(9 * cin));
    store.add(p + ".b", 1, static_cast<std::size_t>(cout), ad::Init::Zero);
  }
}

Var ConvNet::forward(Tape& t, Var image, int width, int height) const {
  Var h = image;
  int w = width, hh = height;
  for (int l = 0; l < spec_.layers; ++l) {
    const int stride = l == 0 ? 2 : 1;
    const std::string p = spec_.name + ".c" + std::to_string(l);
    Var cols = im2col3x3(t, h, w, hh, stride);
    w = strided_size(w, stride);
    hh = strided_size(hh, stride);
    h = ad::linear(t, cols, t.parameter(p + ".w"), t.parameter(p + ".b"));
    if (l != spec_.layers - 1) h = ad::relu(t, h);
  }
  return h;
}

Var sample_bilinear(Tape& t, Var map, int width, int height, Var uv) {
  const Mat& m = t.value(map);
  const Mat& p = t.value(uv);
  if (p.cols() != 2 || m.rows() != static_cast<Eigen::Index>(width) * height) {
    throw ContractError("sample_bilinear: shape mismatch");
  }
  const auto N = p.rows();
  std::vector<std::int32_t> cell(static_cast<std::size_t>(N) * 2);
  for (Eigen::Index n = 0; n < N; ++n) {
    cell[static_cast<std::size_t>(n) * 2] =
        static_cast<std::int32_t>(std::clamp(std::floor(p(n, 0)), 0.0, std::max(0.0, width - 2.0)));
    cell[static_cast<std::size_t>(n) * 2 + 1] =
        static_cast<std::int32_t>(std::clamp(std::floor(p(n, 1)), 0.0, std::max(0.0, height - 2.0)));
  }
  t.sync(cell);
  auto corner = [width, height](int x, int y) {
    return static_cast<Eigen::Index>(std::min(y, height - 1)) * width + std::min(x, width - 1);
  };
  Mat out(N, m.cols());
  for (Eigen::Index n = 0; n < N; ++n) {
    const int x0 = cell[static_cast<std::size_t>(n) * 2], y0 = cell[static_cast<std::size_t>(n) * 2 + 1];
    const double fx = p(n, 0) - x0, fy = p(n, 1) - y0;
    out.row(n) = (1 - fx) * (1 - fy) * m.row(corner(x0, y0)) + fx * (1 - fy) * m.row(corner(x0 + 1, y0)) +
                 (1 - fx) * fy * m.row(corner(x0, y0 + 1)) + fx * fy * m.row(corner(x0 + 1, y0 + 1));
  }
  return t.record(ad::OpKind::Custom, {map.id, uv.id}, std::move(out),
                  [map, uv, corner, cell = std::move(cell)](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    const Mat& m = tp.value(map);
                    const Mat& p = tp.value(uv);
                    const bool gm = tp.requires_grad(map), gp = tp.requires_grad(uv);
                    for (Eigen::Index n = 0; n < p.rows(); ++n) {
                      const int x0 = cell[static_cast<std::size_t>(n) * 2], y0 = cell[static_cast<std::size_t>(n) * 2 + 1];
                      const double fx = p(n, 0) - x0, fy = p(n, 1) - y0;
                      const Eigen::Index c00 = corner(x0, y0), c10 = corner(x0 + 1, y0), c01 = corner(x0, y0 + 1),
                                         c11 = corner(x0 + 1, y0 + 1);
                      if (gm) {
                        Mat& G = tp.grad(map);
                        G.row(c00) += (1 - fx) * (1 - fy) * g.row(n);
                        G.row(c10) += fx * (1 - fy) * g.row(n);
                        G.row(c01) += (1 - fx) * fy * g.row(n);
                        G.row(c11) += fx * fy * g.row(n);
                      }
                      if (gp) {
                        Mat& G = tp.grad(uv);
                        G(n, 0) += g.row(n).dot((1 - fy) * (m.row(c10) - m.row(c00)) + fy * (m.row(c11) - m.row(c01)));
                        G(n, 1) += g.row(n).dot((1 - fx) * (m.row(c01) - m.row(c00)) + fx * (m.row(c11) - m.row(c10)));
                      }
                    }
                  });
}

Var project_points(Tape& t, Var x, const Camera& cam) {
  const Mat& xv = t.value(x);
  if (xv.cols() != 3) throw ContractError("project_points expects N x 3");
  Mat out(xv.rows(), 2);
  for (Eigen::Index n = 0; n < xv.rows(); ++n) {
    const Eigen::Vector3d p = cam.project(xv.row(n).transpose());
    out(n, 0) = p.x();
    out(n, 1) = p.y();
  }
  return t.record(ad::OpKind::Custom, {x.id}, std::move(out), [x, cam](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& xv = tp.value(x);
    const Mat& uv = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    for (Eigen::Index n = 0; n < xv.rows(); ++n) {
      const double z = cam.depth(xv.row(n).transpose());
      // d(u, v)/d(camera point) = (K rows - (u, v) e_z) / z
      const Eigen::Vector3d du = (cam.K.row(0).transpose() - uv(n, 0) * Eigen::Vector3d::UnitZ()) / z;
      const Eigen::Vector3d dv = (cam.K.row(1).transpose() - uv(n, 1) * Eigen::Vector3d::UnitZ()) / z;
      gx.row(n) += (cam.R.transpose() * (g(n, 0) * du + g(n, 1) * dv)).transpose();
    }
  });
}

Var quadrant_pool(Tape& t, Var map, int width, int height) {
  const Mat& m = t.value(map);
  const auto C = m.cols();
  const int hx = width / 2, hy = height / 2;
  std::vector<std::int32_t> quad(static_cast<std::size_t>(width) * height);
  std::array<double, 4> count{};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int q = (y < hy ? 0 : 2) + (x < hx ? 0 : 1);
      quad[static_cast<std::size_t>(y) * width + x] = q;
      count[static_cast<std::size_t>(q)] += 1.0;
    }
  }
  Mat out = Mat::Zero(1, 4 * C);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto q = quad[static_cast<std::size_t>(r)];
    out.block(0, q * C, 1, C) += m.row(r) / count[static_cast<std::size_t>(q)];
  }
  return t.record(ad::OpKind::Custom, {map.id}, std::move(out),
                  [map, C, count, quad = std::move(quad)](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(map)) return;
                    const Mat& g = tp.grad(self);
                    Mat& gm = tp.grad(map);
                    for (Eigen::Index r = 0; r < gm.rows(); ++r) {
                      const auto q = quad[static_cast<std::size_t>(r)];
                      gm.row(r) += g.block(0, q * C, 1, C) / count[static_cast<std::size_t>(q)];
                    }
                  });
}

Appearance::Appearance(AppearanceConfig cfg, int joints) : cfg_(cfg), joints_(joints) {
  geo_cnn_ = ConvNet({"cnn_geo", 3, cfg.cnn_hidden, cfg.geo_channels, 3});
  rgb_cnn_ = ConvNet({"cnn_rgb", 3, cfg.cnn_hidden, cfg.rgb_channels, 3});
  MlpSpec b;
  b.name = "blend";
  const int g = cfg.keypoint_features + cfg.geo_channels;
  b.in = g + cfg.rgb_channels + 3 + 3 + 2 * g;
  b.width = cfg.blend_width;
  b.layers = cfg.blend_layers;
  b.out = 1;
  blend_ = Mlp(b);
}

void Appearance::allocate(ad::ParamStore& store) const {
  geo_cnn_.allocate(store);
  rgb_cnn_.allocate(store);
  store.add("keypoint.w", static_cast<std::size_t>(cfg_.keypoint_features),
            static_cast<std::size_t>(joints_ * 2 * cfg_.keypoints.bands));
  store.add("keypoint.b", 1, static_cast<std::size_t>(cfg_.keypoint_features), ad::Init::Zero);
  blend_.allocate(store);
}

std::vector<std::int32_t> Appearance::visibility(Tape& t, const Mat& x_o, const std::vector<ViewInput>& views) const {
  const auto V = views.size();
  std::vector<std::int32_t> valid(static_cast<std::size_t>(x_o.rows()) * V, 0);
  for (Eigen::Index n = 0; n < x_o.rows(); ++n) {
    for (std::size_t i = 0; i < V; ++i) {
      const Eigen::Vector3d p = views[i].camera.project(x_o.row(n).transpose());
      valid[static_cast<std::size_t>(n) * V + i] = p.z() > 0.0 && views[i].camera.in_frame(p.x(), p.y());
    }
  }
  t.sync(valid);
  return valid;
}

FusedViews Appearance::fuse(Tape& t, Var x_o, const Mat& joints, const std::vector<ViewInput>& views,
                            std::vector<std::int32_t> valid) const {
  const auto N = t.value(x_o).rows();
  const auto V = views.size();
  if (valid.size() != static_cast<std::size_t>(N) * V) throw ContractError("fuse: visibility size mismatch");
  FusedViews out;
  out.valid = std::move(valid);
  const int gdim = cfg_.keypoint_features + cfg_.geo_channels;
  Mat count = Mat::Zero(N, 1);
  std::vector<Mat> masks(V, Mat::Zero(N, 1));
  for (std::size_t i = 0; i < V; ++i) {
    const ViewInput& view = views[i];
    std::vector<std::int32_t> rows;
    for (Eigen::Index n = 0; n < N; ++n) {
      if (out.valid[static_cast<std::size_t>(n) * V + i]) {
        rows.push_back(static_cast<std::int32_t>(n));
        masks[i](n, 0) = 1.0;
        count(n, 0) += 1.0;
      }
    }
    if (rows.empty()) {
      out.g.push_back(ad::zeros(t, N, gdim));
      out.rgb_feat.push_back(ad::zeros(t, N, cfg_.rgb_channels));
      out.color.push_back(ad::zeros(t, N, 3));
      continue;
    }
    const Var xs = ad::gather_rows(t, x_o, rows);
    const Var uv = project_points(t, xs, view.camera);
    const Var color = sample_bilinear(t, t.constant(view.image->pixels), view.image->width, view.image->height, uv);
    const Var uvf = ad::scale(t, uv, 0.5);
    const Var fgeo = sample_bilinear(t, view.geo_map, view.map_width, view.map_height, uvf);
    const Var frgb = sample_bilinear(t, view.rgb_map, view.map_width, view.map_height, uvf);
    const Var kp = ad::relu(t, ad::linear(t, keypoint_encode(t, xs, joints, view.camera, cfg_.keypoints),
                                          t.parameter("keypoint.w"), t.parameter("keypoint.b")));
    const Var parts[] = {kp, fgeo};
    out.g.push_back(ad::scatter_rows(t, ad::concat_cols(t, parts), rows, N));
    out.rgb_feat.push_back(ad::scatter_rows(t, frgb, rows, N));
    out.color.push_back(ad::scatter_rows(t, color, rows, N));
  }
  for (Eigen::Index n = 0; n < N; ++n) {
    if (count(n, 0) == 0.0) throw ContractError("fuse: point " + std::to_string(n) + " is not visible in any view");
  }
  const Var inv = t.constant(count.cwiseInverse());
  Var mean = out.g[0];
  for (std::size_t i = 1; i < V; ++i) mean = ad::add(t, mean, out.g[i]);
  mean = ad::mul_col(t, mean, inv);
  Var var;
  for (std::size_t i = 0; i < V; ++i) {
    const Var dev = ad::mul_col(t, ad::square(t, ad::sub(t, out.g[i], mean)), t.constant(masks[i]));
    var = var.valid() ? ad::add(t, var, dev) : dev;
  }
  var = ad::mul_col(t, var, inv);
  const Var parts[] = {mean, var};
  out.geo = ad::concat_cols(t, parts);
  return out;
}

Var Appearance::blend(Tape& t, const FusedViews& fused, Var direction, Var* weights) const {
  const auto V = fused.g.size();
  std::vector<Var> rows;
  for (std::size_t i = 0; i < V; ++i) {
    const Var parts[] = {fused.g[i], fused.rgb_feat[i], fused.color[i], direction, fused.geo};
    rows.push_back(ad::concat_cols(t, parts));
  }
  const Var logits = ad::stacked_to_cols(t, blend_.forward(t, ad::concat_rows(t, rows)), static_cast<Eigen::Index>(V));
  const Var w = ad::softmax_rows(t, logits, fused.valid);
  Var c;
  for (std::size_t i = 0; i < V; ++i) {
    const Var term = ad::mul_col(t, fused.color[i], ad::slice_cols(t, w, static_cast<Eigen::Index>(i), 1));
    c = c.valid() ? ad::add(t, c, term) : term;
  }
  if (weights != nullptr) *weights = w;
  return c;
}

}  // namespace avatarfield

#include "avatarfield/deformation.hpp"

#include <cmath>
#include <string>

#include "avatarfield/errors.hpp"

namespace avatarfield {

BoneSet BoneSet::from_body(const PosedBody& body) {
  BoneSet b;
  b.transforms = body.transforms;
  b.transforms.push_back(Eigen::Matrix4d::Identity());
  return b;
}

Eigen::Matrix4d blend_transform(const BoneSet& bones, const Eigen::Ref<const Eigen::RowVectorXd>& w) {
  if (w.size() != bones.size()) throw ContractError("blend weights do not match the bone count");
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  for (int i = 0; i < bones.size(); ++i) {
    if (w[i] != 0.0) m += w[i] * bones.transforms[static_cast<std::size_t>(i)];
  }
  return m;
}

Mat inverse_blend(const Mat& x_t, const Mat& w_b, const BoneSet& bones, double max_cond) {
  if (x_t.rows() != w_b.rows() || x_t.cols() != 3) throw ContractError("inverse_blend: shape mismatch");
  Mat out(x_t.rows(), 3);
  for (Eigen::Index n = 0; n < x_t.rows(); ++n) {
    const Eigen::Matrix4d M = blend_transform(bones, w_b.row(n));
    const Eigen::Matrix3d A = M.topLeftCorner<3, 3>();
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(A).singularValues();
    if (!(sv[2] > 0.0) || sv[0] / sv[2] > max_cond) {
      throw DegenerateError("backward skinning: blended transform of point " + std::to_string(n) +
                            " is singular (condition " + std::to_string(sv[0] / sv[2]) + ")");
    }
    const Eigen::Vector3d x = x_t.row(n).transpose();
    out.row(n) = A.partialPivLu().solve(x - M.topRightCorner<3, 1>()).transpose();
  }
  return out;
}

Var forward_skin(Tape& t, Var w, Var x_c, Var delta, const BoneSet& bones) {
  const Mat& wv = t.value(w);
  const Mat& xv = t.value(x_c);
  const Mat& dv = t.value(delta);
  if (wv.cols() != bones.size() || xv.cols() != 3 || wv.rows() != xv.rows() || dv.rows() != xv.rows()) {
    throw ContractError("forward_skin: shape mismatch");
  }
  Mat out = dv;
  for (Eigen::Index n = 0; n < xv.rows(); ++n) {
    const Eigen::Matrix4d M = blend_transform(bones, wv.row(n));
    out.row(n) += (M.topLeftCorner<3, 3>() * xv.row(n).transpose() + M.topRightCorner<3, 1>()).transpose();
  }
  return t.record(ad::OpKind::Custom, {w.id, x_c.id, delta.id}, std::move(out),
                  [w, x_c, delta, bones](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    const Mat& wv = tp.value(w);
                    const Mat& xv = tp.value(x_c);
                    if (tp.requires_grad(delta)) tp.grad(delta) += g;
                    const bool gw = tp.requires_grad(w), gx = tp.requires_grad(x_c);
                    for (Eigen::Index n = 0; n < xv.rows(); ++n) {
                      const Eigen::Vector3d gn = g.row(n).transpose();
                      const Eigen::Vector4d xh = xv.row(n).transpose().homogeneous();
                      if (gw) {
                        Mat& G = tp.grad(w);
                        for (int i = 0; i < bones.size(); ++i) {
                          G(n, i) += gn.dot((bones.transforms[static_cast<std::size_t>(i)] * xh).head<3>());
                        }
                      }
                      if (gx) {
                        const Eigen::Matrix4d M = blend_transform(bones, wv.row(n));
                        tp.grad(x_c).row(n) += (M.topLeftCorner<3, 3>().transpose() * gn).transpose();
                      }
                    }
                  });
}

Var transport_normal(Tape& t, Var w, Var n, const BoneSet& bones) {
  const Mat& wv = t.value(w);
  const Mat& nv = t.value(n);
  if (wv.cols() != bones.size() || nv.cols() != 3 || wv.rows() != nv.rows()) {
    throw ContractError("transport_normal: shape mismatch");
  }
  Mat out(nv.rows(), 3);
  std::vector<double> norms(static_cast<std::size_t>(nv.rows()));
  for (Eigen::Index r = 0; r < nv.rows(); ++r) {
    const Eigen::Vector3d v = blend_transform(bones, wv.row(r)).topLeftCorner<3, 3>() * nv.row(r).transpose();
    const double len = v.norm();
    if (!(len >= 1e-8)) throw DegenerateError("normal transport: blended normal vanishes at row " + std::to_string(r));
    norms[static_cast<std::size_t>(r)] = len;
    out.row(r) = (v / len).transpose();
  }
  return t.record(ad::OpKind::Custom, {w.id, n.id}, std::move(out),
                  [w, n, bones, norms = std::move(norms)](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    const Mat& y = tp.value(self);
                    const Mat& wv = tp.value(w);
                    const Mat& nv = tp.value(n);
                    const bool gw = tp.requires_grad(w), gn = tp.requires_grad(n);
                    for (Eigen::Index r = 0; r < nv.rows(); ++r) {
                      const Eigen::Vector3d yr = y.row(r).transpose();
                      const Eigen::Vector3d gr = g.row(r).transpose();
                      // through normalization: dv = (g - y (y.g)) / |v|
                      const Eigen::Vector3d gv = (gr - yr * yr.dot(gr)) / norms[static_cast<std::size_t>(r)];
                      const Eigen::Vector3d nr = nv.row(r).transpose();
                      if (gw) {
                        Mat& G = tp.grad(w);
                        for (int i = 0; i < bones.size(); ++i) {
                          G(r, i) += gv.dot(bones.transforms[static_cast<std::size_t>(i)].topLeftCorner<3, 3>() * nr);
                        }
                      }
                      if (gn) {
                        const Eigen::Matrix3d A = blend_transform(bones, wv.row(r)).topLeftCorner<3, 3>();
                        tp.grad(n).row(r) += (A.transpose() * gv).transpose();
                      }
                    }
                  });
}

Var forward_weights(Tape& t, Var logits, const Mat& w_init, double floor) {
  const Mat& lv = t.value(logits);
  if (lv.rows() != w_init.rows() || lv.cols() != w_init.cols()) throw ContractError("forward_weights: shape mismatch");
  Mat prior = w_init.unaryExpr([floor](double v) { return std::log(std::max(v, floor)); });
  return ad::softmax_rows(t, ad::add(t, logits, t.constant(std::move(prior))));
}

Mat pose_features(const Mat& theta) {
  Mat out(1, theta.size());
  for (Eigen::Index j = 0; j < theta.rows(); ++j) {
    for (Eigen::Index c = 0; c < 3; ++c) out(0, j * 3 + c) = theta(j, c);
  }
  return out;
}

DeformationField::DeformationField(DeformationConfig cfg, int joints, int hash_width) : cfg_(cfg), joints_(joints) {
  MlpSpec d;
  d.name = "displacement";
  d.in = 3 * cfg_.position_encoding.width_per_scalar() + cfg_.identity_dims + 3 * joints;
  d.width = cfg_.width;
  d.layers = cfg_.layers;
  d.out = 3;
  d.zero_last = true;
  disp_ = Mlp(d);
  MlpSpec w;
  w.name = "skinning";
  w.in = hash_width + cfg_.identity_dims;
  w.width = cfg_.width;
  w.layers = cfg_.layers;
  w.out = joints + 1;
  w.zero_last = true;
  weights_ = Mlp(w);
}

void DeformationField::allocate(ad::ParamStore& store) const {
  disp_.allocate(store);
  weights_.allocate(store);
}

Var DeformationField::displacement(Tape& t, Var x, Var identity, const Mat& pose) const {
  const auto N = t.value(x).rows();
  if (pose.cols() != 3 * joints_) throw ContractError("displacement: pose has the wrong width");
  const Var parts[] = {fourier_encode(t, x, cfg_.position_encoding), ad::tile_rows(t, identity, N),
                       t.constant(pose.replicate(N, 1))};
  return disp_.forward(t, ad::concat_cols(t, parts));
}

Var DeformationField::weight_logits(Tape& t, Var hash, Var identity) const {
  const auto N = t.value(hash).rows();
  const Var parts[] = {hash, ad::tile_rows(t, identity, N)};
  return weights_.forward(t, ad::concat_cols(t, parts));
}

}  // namespace avatarfield

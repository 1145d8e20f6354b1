#include "avatarfield/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield {

namespace {

void check_shapes(const Image& a, const Image& b, const Image& mask) {
  if (a.width != b.width || a.height != b.height || a.width != mask.width || a.height != mask.height ||
      a.pixels.cols() != b.pixels.cols() || mask.pixels.cols() != 1) {
    throw ContractError("metrics: image shapes differ");
  }
}

// Separable Gaussian blur with the window renormalized where it leaves the image.
Eigen::ArrayXXd blur(const Eigen::ArrayXXd& img) {
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  double k[2 * kRadius + 1];
  for (int i = -kRadius; i <= kRadius; ++i) k[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
  const auto H = img.rows(), W = img.cols();
  Eigen::ArrayXXd tmp(H, W), out(H, W);
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x = 0; x < W; ++x) {
      double s = 0.0, n = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const Eigen::Index xx = x + i;
        if (xx < 0 || xx >= W) continue;
        s += k[i + kRadius] * img(y, xx);
        n += k[i + kRadius];
      }
      tmp(y, x) = s / n;
    }
  }
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x = 0; x < W; ++x) {
      double s = 0.0, n = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const Eigen::Index yy = y + i;
        if (yy < 0 || yy >= H) continue;
        s += k[i + kRadius] * tmp(yy, x);
        n += k[i + kRadius];
      }
      out(y, x) = s / n;
    }
  }
  return out;
}

Eigen::ArrayXXd channel(const Image& img, Eigen::Index c) {
  Eigen::ArrayXXd out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out(y, x) = img.pixels(static_cast<Eigen::Index>(y) * img.width + x, c);
  }
  return out;
}

}  // namespace

double masked_mse(const Image& a, const Image& b, const Image& mask) {
  check_shapes(a, b, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < a.pixels.rows(); ++i) {
    if (mask.pixels(i, 0) <= 0.5) continue;
    sum += (a.pixels.row(i) - b.pixels.row(i)).squaredNorm();
    n += static_cast<std::size_t>(a.pixels.cols());
  }
  if (n == 0) throw ContractError("metrics: empty mask");
  return sum / static_cast<double>(n);
}

double masked_psnr(const Image& a, const Image& b, const Image& mask) {
  const double mse = masked_mse(a, b, mask);
  if (mse <= 1e-10) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

double masked_ssim(const Image& a, const Image& b, const Image& mask) {
  check_shapes(a, b, mask);
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t n = 0;
  for (Eigen::Index c = 0; c < a.pixels.cols(); ++c) {
    const Eigen::ArrayXXd x = channel(a, c), y = channel(b, c);
    const Eigen::ArrayXXd mx = blur(x), my = blur(y);
    const Eigen::ArrayXXd sxx = blur(x * x) - mx * mx;
    const Eigen::ArrayXXd syy = blur(y * y) - my * my;
    const Eigen::ArrayXXd sxy = blur(x * y) - mx * my;
    const Eigen::ArrayXXd map = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2));
    for (int py = 0; py < a.height; ++py) {
      for (int px = 0; px < a.width; ++px) {
        if (mask.pixels(static_cast<Eigen::Index>(py) * a.width + px, 0) <= 0.5) continue;
        total += map(py, px);
        ++n;
      }
    }
  }
  if (n == 0) throw ContractError("metrics: empty mask");
  return total / static_cast<double>(n);
}

Image box_mask(const Camera& cam, const PosedBody& body, double margin) {
  const Box box = vertex_box(body).expanded(margin);
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  for (int corner = 0; corner < 8; ++corner) {
    const Eigen::Vector3d p((corner & 1) ? box.hi.x() : box.lo.x(), (corner & 2) ? box.hi.y() : box.lo.y(),
                            (corner & 4) ? box.hi.z() : box.lo.z());
    const Eigen::Vector3d q = cam.project(p);
    if (q.z() <= 0.0) throw ContractError("box_mask: body box reaches behind the camera");
    u0 = std::min(u0, q.x());
    u1 = std::max(u1, q.x());
    v0 = std::min(v0, q.y());
    v1 = std::max(v1, q.y());
  }
  Image m(cam.width, cam.height, 1);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      if (x >= u0 && x <= u1 && y >= v0 && y <= v1) m.pixels(static_cast<Eigen::Index>(y) * cam.width + x, 0) = 1.0;
    }
  }
  return m;
}

}  // namespace avatarfield

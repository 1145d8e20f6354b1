#include "avatarfield/camera.hpp"

#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield {

void Camera::validate(double tolerance) const {
  if (width <= 0 || height <= 0) throw ValidationError("camera: image size must be positive");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw ValidationError("camera: focal lengths must be positive");
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= tolerance) || std::abs(R.determinant() - 1.0) > tolerance) {
    throw ValidationError("camera: rotation is not orthonormal (|R^T R - I| = " + std::to_string(ortho) + ")");
  }
  if (!t.allFinite()) throw ValidationError("camera: translation is not finite");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double focal, int width, int height) {
  // Camera axes: x right, y down, z forward.
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Camera cam;
  cam.R.row(0) = x;
  cam.R.row(1) = y;
  cam.R.row(2) = z;
  cam.t = -cam.R * eye;
  cam.K << focal, 0.0, (width - 1) / 2.0, 0.0, focal, (height - 1) / 2.0, 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace avatarfield

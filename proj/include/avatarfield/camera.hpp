#pragma once

#include <Eigen/Dense>

namespace avatarfield {

// Pinhole camera, world -> camera x_cam = R x + t, pixel = K x_cam / z.
// Pixel (i, j) has its center at integer coordinates (u = i, v = j).
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& x) const { return R * x + t; }
  [[nodiscard]] double depth(const Eigen::Vector3d& x) const { return R.row(2).dot(x) + t.z(); }
  // (u, v, depth); u, v are meaningless when depth <= 0.
  [[nodiscard]] Eigen::Vector3d project(const Eigen::Vector3d& x) const {
    const Eigen::Vector3d c = to_camera(x);
    const Eigen::Vector3d p = K * c;
    return {p.x() / p.z(), p.y() / p.z(), c.z()};
  }
  [[nodiscard]] Eigen::Vector3d center() const { return -R.transpose() * t; }
  // Unit world-space direction through pixel coordinates (u, v).
  [[nodiscard]] Eigen::Vector3d ray_direction(double u, double v) const {
    return (R.transpose() * K.inverse() * Eigen::Vector3d(u, v, 1.0)).normalized();
  }
  [[nodiscard]] bool in_frame(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0;
  }

  // Throws ValidationError for non-positive focal lengths, a non-orthonormal
  // rotation or an empty image size.
  void validate(double tolerance = 1e-6) const;

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double focal, int width, int height);
};

}  // namespace avatarfield

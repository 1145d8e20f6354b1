#pragma once

#include <random>
#include <string>

#include <gtest/gtest.h>

#include "avatarfield/autodiff/grad_check.hpp"
#include "avatarfield/autodiff/ops.hpp"
#include "avatarfield/autodiff/param_store.hpp"

namespace testing_support {

namespace ad = avatarfield::ad;

inline ad::Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// sum(y * P) with a fixed random P, so every output entry gets a distinct weight.
// P is small so the absolute 1e-8 floor of the relative error sits well above
// the cancellation noise of central differences on near-zero gradients.
class Projection {
 public:
  explicit Projection(std::uint64_t seed, double scale = 1e-3) : rng_(seed), scale_(scale) {}
  ad::Var operator()(ad::Tape& t, ad::Var y) {
    const ad::Mat& v = t.value(y);
    if (p_.rows() != v.rows() || p_.cols() != v.cols()) p_ = scale_ * random_mat(rng_, v.rows(), v.cols());
    return ad::sum(t, ad::mul(t, y, t.constant(p_)));
  }

 private:
  std::mt19937_64 rng_;
  double scale_;
  ad::Mat p_;
};

inline void expect_gradients(ad::ParamStore& store, const std::function<ad::Var(ad::Tape&)>& build,
                             double h = 1e-5, double tol = 1e-4) {
  auto f = ad::tape_objective(store, build);
  auto r = ad::finite_diff_check(f, store.values(), h);
  EXPECT_LE(r.max_relative_error, tol) << "coordinate " << r.worst_coordinate << " analytic " << r.analytic
                                       << " numeric " << r.numeric;
}

}  // namespace testing_support

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace avatarfield {

struct GradCase {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  double seconds = 0.0;
  std::string worst;  // segment[index] of the largest error
  double analytic = 0.0, numeric = 0.0;
};

struct GradSuiteResult {
  std::vector<GradCase> cases;
  double max_relative_error = 0.0;
  double seconds = 0.0;
};

// Central-difference check of every module's composite on small random
// configurations (h = 1e-5).
GradSuiteResult run_grad_suite(std::uint64_t seed, const std::function<void(const GradCase&)>& on_case = {});

}  // namespace avatarfield

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "avatarfield/autodiff/tape.hpp"

namespace avatarfield::ad {

// A pure scalar function of a flat parameter vector. When `grad` is non-null
// the implementation must also fill it with the tape gradient. Piecewise
// choices go through `log`, which the checker switches to replay for the
// perturbed evaluations.
using Objective = std::function<double(std::span<const double> theta, DecisionLog& log, std::vector<double>* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

class ParamStore;

// Adapts a tape-building function into an Objective over the store's values.
// The store is overwritten with each probed parameter vector.
Objective tape_objective(ParamStore& store, std::function<Var(Tape&)> build);

// Central differences (f(theta + h e_k) - f(theta - h e_k)) / 2h against the
// tape gradient, relative error |num - ana| / max(|ana|, 1e-8). Checks every
// coordinate unless `coordinates` is non-empty.
GradCheckResult finite_diff_check(const Objective& f, std::span<const double> theta, double h,
                                  std::span<const std::size_t> coordinates = {});

}  // namespace avatarfield::ad

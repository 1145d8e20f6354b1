#include "avatarfield/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

Objective tape_objective(ParamStore& store, std::function<Var(Tape&)> build) {
  return [&store, build = std::move(build)](std::span<const double> theta, DecisionLog& log,
                                           std::vector<double>* grad) {
    std::copy(theta.begin(), theta.end(), store.values().begin());
    Tape tape(&store);
    tape.attach_log(&log);
    const Var loss = build(tape);
    const double value = tape.scalar_value(loss);
    if (grad != nullptr) *grad = tape.gradient(loss);
    return value;
  };
}

GradCheckResult finite_diff_check(const Objective& f, std::span<const double> theta_in, double h,
                                  std::span<const std::size_t> coordinates) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  // theta may alias the storage the objective writes into.
  const std::vector<double> theta(theta_in.begin(), theta_in.end());
  DecisionLog log(DecisionLog::Mode::Record);
  std::vector<double> analytic;
  const double base = f(theta, log, &analytic);
  if (!std::isfinite(base)) throw NumericalError("finite_diff_check: objective is non-finite at the base point");
  if (analytic.size() != theta.size()) throw ContractError("finite_diff_check: gradient size mismatch");

  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(theta.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }

  std::vector<double> probe(theta.begin(), theta.end());
  GradCheckResult result;
  for (std::size_t k : coords) {
    if (k >= theta.size()) throw ContractError("finite_diff_check: coordinate out of range");
    probe[k] = theta[k] + h;
    log.replay();
    const double up = f(probe, log, nullptr);
    probe[k] = theta[k] - h;
    log.replay();
    const double down = f(probe, log, nullptr);
    probe[k] = theta[k];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("finite_diff_check: non-finite objective when perturbing coordinate " +
                           std::to_string(k));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(numeric - analytic[k]) / std::max(std::abs(analytic[k]), 1e-8);
    if (result.checked == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_coordinate = k;
      result.analytic = analytic[k];
      result.numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace avatarfield::ad

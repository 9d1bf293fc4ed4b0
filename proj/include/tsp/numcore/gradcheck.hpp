#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "tsp/numcore/autodiff.hpp"
#include "tsp/numcore/param_store.hpp"

namespace tsp::num {

// Builds a scalar loss on a tape bound to the store being checked. Must be
// deterministic: any randomness has to be fixed before the call.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double abs_floor = 1e-6;
  std::size_t min_coords = 100;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

// Central differences over a random subsample of coordinates (every
// parameter gets at least a few; at least `min_coords` overall, or all of
// them when there are fewer). Restores the store afterwards.
GradCheckReport finite_difference_check(const LossBuilder& loss, ParamStore& store, const GradCheckOptions& opts = {});

// Variant that checks caller-supplied analytic gradients.
GradCheckReport finite_difference_check(const LossBuilder& loss, ParamStore& store, const Gradients& analytic,
                                        const GradCheckOptions& opts = {});

// Forward + backward once; returns the loss value and fills `grads`.
double evaluate_with_grads(const LossBuilder& loss, const ParamStore& store, Gradients& grads);

}  // namespace tsp::num

#pragma once

#include <string>
#include <vector>

#include "tsp/numcore/param_store.hpp"

namespace tsp::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam step over every parameter in the store. Each must have
// an entry in `grads`, otherwise ContractViolation.
void adam_update(ParamStore& store, const Gradients& grads, const AdamConfig& cfg);

// Same, restricted to `names`. Parameters not listed keep their values and
// their moments untouched.
void adam_update(ParamStore& store, const Gradients& grads, const std::vector<std::string>& names,
                 const AdamConfig& cfg);

// L2 norm over the listed gradients, in the order given.
double global_norm(const Gradients& grads, const std::vector<std::string>& names);

// Rescales the listed gradients so their joint norm is at most `max_norm`.
// A non-positive `max_norm` disables clipping. Returns the pre-clip norm.
double clip_global_norm(Gradients& grads, const std::vector<std::string>& names, double max_norm);

}  // namespace tsp::num

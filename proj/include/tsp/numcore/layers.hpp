#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tsp/numcore/autodiff.hpp"
#include "tsp/numcore/param_store.hpp"
#include "tsp/rng.hpp"

namespace tsp::num {

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

/// Affine layer `x·W + b` whose parameters live in a ParamStore under
/// `<prefix>.w` [in,out] and `<prefix>.b` [out].
struct DenseLayer {
  std::string prefix;
  std::size_t in = 0;
  std::size_t out = 0;

  static DenseLayer create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

  std::string weight_name() const { return prefix + ".w"; }
  std::string bias_name() const { return prefix + ".b"; }
  Var forward(Tape& tape, Var x) const;
};

/// Gated recurrent unit, gates ordered (reset, update, candidate):
///   r  = σ(x W_r + b_ir + h U_r + b_hr)
///   z  = σ(x W_z + b_iz + h U_z + b_hz)
///   n  = tanh(x W_n + b_in + r ⊙ (h U_n + b_hn))
///   h' = (1 - z) ⊙ n + z ⊙ h
/// Stored fused as `<prefix>.w_ih` [in,3h], `.b_ih` [3h], `.w_hh` [h,3h], `.b_hh` [3h].
struct GruCell {
  std::string prefix;
  std::size_t in = 0;
  std::size_t hidden = 0;

  static GruCell create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);

  Var step(Tape& tape, Var x, Var h) const;
};

struct Categorical {
  std::vector<double> probs;
  std::vector<double> log_probs;
  double entropy = 0.0;
  std::size_t sample = 0;
};

// Softmax over one row of logits plus an inverse-CDF draw from `rng`.
Categorical softmax_categorical(std::span<const double> logits, Rng& rng);
// Same distribution without drawing; `sample` is the argmax (first on ties).
Categorical softmax_greedy(std::span<const double> logits);

std::size_t argmax_first(std::span<const double> values);

}  // namespace tsp::num

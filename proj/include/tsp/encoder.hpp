#pragma once

#include <cstddef>
#include <vector>

#include "tsp/env.hpp"
#include "tsp/numcore/autodiff.hpp"
#include "tsp/numcore/layers.hpp"
#include "tsp/synthdata.hpp"

namespace tsp::enc {

struct EncoderConfig {
  int unit_dim = 16;
  int query_dim = 16;
  int k_samples = 10;
  int state_dim = 128;
  int hidden_dim = 128;

  std::size_t video_dim() const { return static_cast<std::size_t>(k_samples * unit_dim); }
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Clip rows sampled at the midpoints of k equal sub-intervals of [start, end),
// floored and clamped to [0, N-1].
std::vector<std::size_t> sample_indices(int num_clips, const env::Boundary& b, int k);

// The sampled unit-feature rows concatenated in order, length k·d_u.
std::vector<double> sample_interval_features(const data::Episode& ep, const env::Boundary& b, int k);

/// State encoder: query-gated fusion of global video, current interval and
/// normalised boundary, a tanh projection, then a GRU.
///
///   A_g = σ(E W_g + b_g) ⊙ V_g     (k·d_u)
///   A_c = σ(E W_c + b_c) ⊙ V_c     (k·d_u)
///   A_l = σ(E W_l + b_l) ⊙ L/N     (2)
///   x   = tanh([A_g, A_c, A_l] W_φ + b_φ)
///   s   = GRU(x, h)
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& cfg);

  // Registers freshly initialised parameters under "encoder.*".
  static Encoder create(num::ParamStore& store, const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  // All inputs are [M, ·] row batches.
  num::Var fuse(num::Tape& tape, num::Var v_global, num::Var v_current, num::Var boundary_norm,
                num::Var query) const;
  num::Var recurrent(num::Tape& tape, num::Var pre_state, num::Var hidden) const;

  const num::DenseLayer& gate_global() const { return gate_global_; }
  const num::DenseLayer& gate_current() const { return gate_current_; }
  const num::DenseLayer& gate_boundary() const { return gate_boundary_; }
  const num::DenseLayer& projection() const { return phi_; }
  const num::GruCell& gru() const { return gru_; }

 private:
  EncoderConfig cfg_;
  num::DenseLayer gate_global_;
  num::DenseLayer gate_current_;
  num::DenseLayer gate_boundary_;
  num::DenseLayer phi_;
  num::GruCell gru_;
};

}  // namespace tsp::enc

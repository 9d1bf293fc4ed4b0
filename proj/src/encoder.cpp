#include "tsp/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/error.hpp"

namespace tsp::enc {

void EncoderConfig::validate() const {
  require(unit_dim > 0 && query_dim > 0, "encoder dims must be positive");
  require(k_samples >= 2, "encoder.k_samples must be >= 2");
  require(state_dim > 0, "encoder.state_dim must be positive");
  require(hidden_dim > 0, "encoder.hidden_dim must be positive");
}

std::vector<std::size_t> sample_indices(int num_clips, const env::Boundary& b, int k) {
  require(k > 0, "sample count must be positive");
  require(num_clips > 0, "clip count must be positive");
  std::vector<std::size_t> idx(static_cast<std::size_t>(k));
  const double w = b.end - b.start;
  for (int j = 0; j < k; ++j) {
    const double pos = b.start + (j + 0.5) * w / k;
    const double clipped = std::clamp(std::floor(pos), 0.0, static_cast<double>(num_clips - 1));
    idx[static_cast<std::size_t>(j)] = static_cast<std::size_t>(clipped);
  }
  return idx;
}

std::vector<double> sample_interval_features(const data::Episode& ep, const env::Boundary& b, int k) {
  const std::size_t du = ep.unit_dim();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(k) * du);
  for (std::size_t i : sample_indices(ep.num_clips(), b, k)) {
    const auto row = ep.unit_features.row(i);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

Encoder::Encoder(const EncoderConfig& cfg)
    : cfg_(cfg),
      gate_global_{"encoder.gate_global", static_cast<std::size_t>(cfg.query_dim), cfg.video_dim()},
      gate_current_{"encoder.gate_current", static_cast<std::size_t>(cfg.query_dim), cfg.video_dim()},
      gate_boundary_{"encoder.gate_boundary", static_cast<std::size_t>(cfg.query_dim), 2},
      phi_{"encoder.phi", 2 * cfg.video_dim() + 2, static_cast<std::size_t>(cfg.state_dim)},
      gru_{"encoder.gru", static_cast<std::size_t>(cfg.state_dim), static_cast<std::size_t>(cfg.hidden_dim)} {
  cfg_.validate();
}

Encoder Encoder::create(num::ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  Encoder e(cfg);
  num::DenseLayer::create(store, e.gate_global_.prefix, e.gate_global_.in, e.gate_global_.out, rng);
  num::DenseLayer::create(store, e.gate_current_.prefix, e.gate_current_.in, e.gate_current_.out, rng);
  num::DenseLayer::create(store, e.gate_boundary_.prefix, e.gate_boundary_.in, e.gate_boundary_.out, rng);
  num::DenseLayer::create(store, e.phi_.prefix, e.phi_.in, e.phi_.out, rng);
  num::GruCell::create(store, e.gru_.prefix, e.gru_.in, e.gru_.hidden, rng);
  return e;
}

num::Var Encoder::fuse(num::Tape& tape, num::Var v_global, num::Var v_current, num::Var boundary_norm,
                       num::Var query) const {
  const std::size_t vd = cfg_.video_dim();
  require(v_global.value().rank() == 2 && v_global.value().cols() == vd,
          "fuse_state: global video feature must be [M, " + std::to_string(vd) + "], got " +
              num::shape_str(v_global.shape()));
  require(v_current.value().rank() == 2 && v_current.value().cols() == vd,
          "fuse_state: current video feature must be [M, " + std::to_string(vd) + "], got " +
              num::shape_str(v_current.shape()));
  require(boundary_norm.value().rank() == 2 && boundary_norm.value().cols() == 2,
          "fuse_state: boundary must be [M, 2], got " + num::shape_str(boundary_norm.shape()));
  require(query.value().rank() == 2 && query.value().cols() == static_cast<std::size_t>(cfg_.query_dim),
          "fuse_state: query must be [M, " + std::to_string(cfg_.query_dim) + "], got " +
              num::shape_str(query.shape()));

  num::Var a_g = num::mul(num::sigmoid(gate_global_.forward(tape, query)), v_global);
  num::Var a_c = num::mul(num::sigmoid(gate_current_.forward(tape, query)), v_current);
  num::Var a_l = num::mul(num::sigmoid(gate_boundary_.forward(tape, query)), boundary_norm);
  return num::tanh(phi_.forward(tape, num::concat_cols({a_g, a_c, a_l})));
}

num::Var Encoder::recurrent(num::Tape& tape, num::Var pre_state, num::Var hidden) const {
  return gru_.step(tape, pre_state, hidden);
}

}  // namespace tsp::enc

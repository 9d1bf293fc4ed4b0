#include "tsp/numcore/layers.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/error.hpp"

namespace tsp::num {

Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  require(fan_in > 0, "fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(-bound, bound);
  return t;
}

DenseLayer DenseLayer::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                              Rng& rng) {
  DenseLayer l{prefix, in, out};
  store.add(l.weight_name(), init_uniform_fan_in({in, out}, in, rng));
  store.add(l.bias_name(), Tensor({out}));
  return l;
}

Var DenseLayer::forward(Tape& tape, Var x) const {
  return dense(x, tape.param(weight_name()), tape.param(bias_name()));
}

GruCell GruCell::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  GruCell c{prefix, in, hidden};
  store.add(prefix + ".w_ih", init_uniform_fan_in({in, 3 * hidden}, in, rng));
  store.add(prefix + ".b_ih", Tensor({3 * hidden}));
  store.add(prefix + ".w_hh", init_uniform_fan_in({hidden, 3 * hidden}, hidden, rng));
  store.add(prefix + ".b_hh", Tensor({3 * hidden}));
  return c;
}

Var GruCell::step(Tape& tape, Var x, Var h) const {
  require(x.value().rank() == 2 && x.value().cols() == in,
          "gru_step: input " + shape_str(x.shape()) + " does not match input width " + std::to_string(in));
  require(h.value().rank() == 2 && h.value().cols() == hidden && h.value().rows() == x.value().rows(),
          "gru_step: hidden " + shape_str(h.shape()) + " does not match [" + std::to_string(x.value().rows()) + ", " +
              std::to_string(hidden) + "]");
  const std::size_t H = hidden;
  Var gx = dense(x, tape.param(prefix + ".w_ih"), tape.param(prefix + ".b_ih"));
  Var gh = dense(h, tape.param(prefix + ".w_hh"), tape.param(prefix + ".b_hh"));
  Var r = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
  Var z = sigmoid(add(slice_cols(gx, H, 2 * H), slice_cols(gh, H, 2 * H)));
  Var n = tanh(add(slice_cols(gx, 2 * H, 3 * H), mul(r, slice_cols(gh, 2 * H, 3 * H))));
  return add(mul(one_minus(z), n), mul(z, h));
}

std::size_t argmax_first(std::span<const double> values) {
  require(!values.empty(), "argmax of empty range");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Categorical softmax_greedy(std::span<const double> logits) {
  require(logits.size() >= 2, "categorical needs at least two outcomes");
  for (double x : logits) require(std::isfinite(x), "categorical logits must be finite");
  Categorical c;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - mx);
  const double lse = mx + std::log(s);
  c.probs.reserve(logits.size());
  c.log_probs.reserve(logits.size());
  for (double x : logits) {
    c.log_probs.push_back(x - lse);
    c.probs.push_back(std::exp(x - lse));
  }
  for (std::size_t i = 0; i < logits.size(); ++i) c.entropy -= c.probs[i] * c.log_probs[i];
  c.sample = argmax_first(logits);
  return c;
}

Categorical softmax_categorical(std::span<const double> logits, Rng& rng) {
  Categorical c = softmax_greedy(logits);
  const double u = rng.uniform();
  double cum = 0.0;
  c.sample = c.probs.size() - 1;
  for (std::size_t i = 0; i < c.probs.size(); ++i) {
    cum += c.probs[i];
    if (u < cum) {
      c.sample = i;
      break;
    }
  }
  return c;
}

}  // namespace tsp::num

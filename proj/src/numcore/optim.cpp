#include "tsp/numcore/optim.hpp"

#include <cmath>

#include "tsp/error.hpp"

namespace tsp::num {

namespace {

const Tensor& grad_for(const Gradients& grads, const std::string& name) {
  auto it = grads.find(name);
  require(it != grads.end(), "missing gradient for parameter '" + name + "'");
  return it->second;
}

}  // namespace

void adam_update(ParamStore& store, const Gradients& grads, const AdamConfig& cfg) {
  adam_update(store, grads, store.names(), cfg);
}

void adam_update(ParamStore& store, const Gradients& grads, const std::vector<std::string>& names,
                 const AdamConfig& cfg) {
  // Validate everything before touching any state.
  for (const auto& name : names) {
    const Tensor& g = grad_for(grads, name);
    require(g.shape() == store.get(name).shape(),
            "gradient shape " + shape_str(g.shape()) + " does not match parameter '" + name + "' " +
                shape_str(store.get(name).shape()));
  }
  for (const auto& name : names) {
    const Tensor& g = grads.at(name);
    Tensor& p = store.get(name);
    AdamMoments& m = store.moments(name);
    ++m.step;
    const double t = static_cast<double>(m.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.first[i] = cfg.beta1 * m.first[i] + (1.0 - cfg.beta1) * g[i];
      m.second[i] = cfg.beta2 * m.second[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p.all_finite()) throw NumericError("parameter '" + name + "' became non-finite after Adam step");
  }
}

double global_norm(const Gradients& grads, const std::vector<std::string>& names) {
  double s = 0.0;
  for (const auto& name : names)
    for (double g : grad_for(grads, name).data()) s += g * g;
  return std::sqrt(s);
}

double clip_global_norm(Gradients& grads, const std::vector<std::string>& names, double max_norm) {
  const double norm = global_norm(grads, names);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& name : names)
      for (double& g : grads.at(name).data()) g *= f;
  }
  return norm;
}

}  // namespace tsp::num

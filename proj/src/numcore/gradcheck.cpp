#include "tsp/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "tsp/error.hpp"
#include "tsp/rng.hpp"

namespace tsp::num {

namespace {

double loss_value(const LossBuilder& loss, const ParamStore& store) {
  Tape tape(&store);
  return loss(tape).value().item();
}

}  // namespace

double evaluate_with_grads(const LossBuilder& loss, const ParamStore& store, Gradients& grads) {
  Tape tape(&store);
  Var l = loss(tape);
  tape.backward(l);
  grads = tape.param_grads();
  return l.value().item();
}

GradCheckReport finite_difference_check(const LossBuilder& loss, ParamStore& store, const GradCheckOptions& opts) {
  Gradients analytic;
  evaluate_with_grads(loss, store, analytic);
  return finite_difference_check(loss, store, analytic, opts);
}

GradCheckReport finite_difference_check(const LossBuilder& loss, ParamStore& store, const Gradients& analytic,
                                        const GradCheckOptions& opts) {
  Rng rng(opts.seed);
  std::vector<std::pair<std::string, std::size_t>> all;
  std::set<std::pair<std::string, std::size_t>> chosen;
  for (const auto& name : store.names()) {
    const std::size_t n = store.get(name).size();
    for (std::size_t i = 0; i < n; ++i) all.emplace_back(name, i);
    const std::size_t want = chosen.size() + std::min<std::size_t>(3, n);
    while (chosen.size() < want) chosen.emplace(name, rng.below(n));
  }
  const std::size_t target = std::min(all.size(), std::max(opts.min_coords, chosen.size()));
  if (target == all.size()) {
    chosen.insert(all.begin(), all.end());
  } else {
    while (chosen.size() < target) chosen.insert(all[rng.below(all.size())]);
  }

  GradCheckReport rep;
  for (const auto& [name, idx] : chosen) {
    auto it = analytic.find(name);
    // A parameter the loss never touched has zero analytic gradient.
    const double a = it == analytic.end() ? 0.0 : it->second[idx];
    double& p = store.get(name)[idx];
    const double orig = p;
    p = orig + opts.step;
    const double fp = loss_value(loss, store);
    p = orig - opts.step;
    const double fm = loss_value(loss, store);
    p = orig;
    const double num = (fp - fm) / (2.0 * opts.step);
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), opts.abs_floor});
    ++rep.coords_checked;
    if (rel > rep.max_rel_error || rep.worst_param.empty()) {
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
      if (rel >= rep.max_rel_error) {
        rep.worst_param = name;
        rep.worst_index = idx;
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
    }
  }
  rep.passed = rep.max_rel_error < opts.tolerance;
  return rep;
}

}  // namespace tsp::num

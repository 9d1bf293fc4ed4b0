#pragma once

#include <array>
#include <span>
#include <vector>

#include "tsp/env.hpp"

namespace tsp::reward {

// How the last accumulated return is bootstrapped.
enum class Bootstrap {
  // R_T = r_T + γ V(s_T): value of the last visited state.
  FinalState,
  // R_T = r_T + γ V(s_{T+1}): value of the state after the last action.
  Successor,
};

struct RewardConfig {
  double zeta = 1.0;
  double gamma = 0.4;
  double iou_gate = 0.5;
  double tie_eps = 1e-9;
  Bootstrap bootstrap = Bootstrap::FinalState;

  void validate() const;
};

// Leaf reward from the IoU before and after the primitive action:
//   ζ + U_t   if U_t > U_{t-1} and U_t > gate
//   ζ         if U_t > U_{t-1} and U_t <= gate
//   -ζ/10     if U_{t-1} >= U_t >= 0
//   -ζ        otherwise
double leaf_reward(double u_prev, double u_curr, const RewardConfig& cfg);

// Root reward: intrinsic term (ζ when the chosen branch matched the best
// counterfactual branch, else U_t - U_max) plus extrinsic term U_t - U_{t-1}.
// Throws ContractViolation if U_t exceeds U_max by more than tie_eps.
double root_reward(double u_prev, double u_curr, double u_max, const RewardConfig& cfg);

struct BranchIous {
  double u_max = 0.0;
  std::array<double, env::kBranchCount> per_branch{};
};

// Applies each candidate to `b` and scores it against the ground truth.
BranchIous compute_u_max(const env::GroundTruth& gt, const env::Boundary& b,
                         const std::array<env::PrimitiveAction, env::kBranchCount>& candidates,
                         const env::EnvConfig& cfg);

// Backward recursion R_t = r_t + γ R_{t+1}, with R_T = r_T + γ·terminal_value.
std::vector<double> accumulate_returns(std::span<const double> rewards, double terminal_value, double gamma);

}  // namespace tsp::reward

#include "tsp/reward.hpp"

#include <algorithm>
#include <string>

#include "tsp/error.hpp"

namespace tsp::reward {

void RewardConfig::validate() const {
  require(zeta > 0.0, "reward.zeta must be positive");
  require(gamma > 0.0 && gamma < 1.0, "reward.gamma must lie in (0, 1)");
  require(iou_gate > 0.0 && iou_gate < 1.0, "reward.iou_gate must lie in (0, 1)");
  require(tie_eps >= 0.0, "reward.tie_eps must be non-negative");
}

double leaf_reward(double u_prev, double u_curr, const RewardConfig& cfg) {
  if (u_curr > u_prev) return u_curr > cfg.iou_gate ? cfg.zeta + u_curr : cfg.zeta;
  if (u_curr >= 0.0) return -cfg.zeta / 10.0;
  return -cfg.zeta;
}

double root_reward(double u_prev, double u_curr, double u_max, const RewardConfig& cfg) {
  require(u_curr <= u_max + cfg.tie_eps,
          "root_reward: U_t=" + std::to_string(u_curr) + " exceeds U_max=" + std::to_string(u_max));
  const double extrinsic = u_curr - u_prev;
  const double intrinsic = u_curr >= u_max - cfg.tie_eps ? cfg.zeta : u_curr - u_max;
  return intrinsic + extrinsic;
}

BranchIous compute_u_max(const env::GroundTruth& gt, const env::Boundary& b,
                         const std::array<env::PrimitiveAction, env::kBranchCount>& candidates,
                         const env::EnvConfig& cfg) {
  BranchIous out;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    out.per_branch[i] = env::temporal_iou(env::apply_action(b, candidates[i], cfg), gt);
  out.u_max = *std::max_element(out.per_branch.begin(), out.per_branch.end());
  return out;
}

std::vector<double> accumulate_returns(std::span<const double> rewards, double terminal_value, double gamma) {
  std::vector<double> out(rewards.size());
  if (rewards.empty()) return out;
  const std::size_t last = rewards.size() - 1;
  out[last] = rewards[last] + gamma * terminal_value;
  for (std::size_t t = last; t-- > 0;) out[t] = rewards[t] + gamma * out[t + 1];
  return out;
}

}  // namespace tsp::reward

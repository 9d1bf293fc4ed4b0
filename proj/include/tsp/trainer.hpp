#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsp/env.hpp"
#include "tsp/numcore/autodiff.hpp"
#include "tsp/policy.hpp"
#include "tsp/reward.hpp"
#include "tsp/rng.hpp"
#include "tsp/synthdata.hpp"

namespace tsp::train {

struct TrainConfig {
  int batch_size = 8;             // M, episodes per iteration
  int max_steps = 10;             // T_max
  int alternation_period = 200;   // K
  double entropy_weight = 0.1;    // α
  double align_weight = 1.0;      // λ
  double learning_rate = 1e-3;
  double grad_clip = 5.0;         // global-norm clip; <= 0 disables
  std::uint64_t total_iterations = 5000;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
};

// ψ = ⌊i/K⌋ mod 2. 1 trains the root side, 0 the leaf side.
int train_side(std::uint64_t iteration, int period);

/// Everything recorded for one episode at one step.
struct StepRecord {
  std::vector<double> state;
  env::Branch branch = env::Branch::ScaleVariation;
  env::PrimitiveAction action;
  std::vector<double> root_probs;
  std::vector<double> leaf_probs;
  double root_log_prob = 0.0;
  double root_entropy = 0.0;
  double leaf_log_prob = 0.0;
  double leaf_entropy = 0.0;
  double root_value = 0.0;
  double leaf_value = 0.0;
  double align_logit = 0.0;
  env::Boundary boundary;  // after the action
  double iou = 0.0;        // U_t
  double leaf_reward = 0.0;
  double root_reward = 0.0;
  std::array<env::PrimitiveAction, env::kBranchCount> candidates;
  std::array<double, env::kBranchCount> candidate_iou{};
  double u_max = 0.0;
};

struct Trajectory {
  std::string episode_id;
  env::GroundTruth ground_truth;
  env::EnvConfig env;
  env::Boundary initial;
  double u0 = 0.0;
  std::vector<StepRecord> steps;
  // Critic estimates at the state after the last action (Successor bootstrap).
  double successor_root_value = 0.0;
  double successor_leaf_value = 0.0;

  // U_{t-1} for 1-based step t (U_0 for t = 1).
  double iou_before(std::size_t t) const { return t <= 1 ? u0 : steps[t - 2].iou; }
  env::Boundary boundary_before(std::size_t t) const { return t <= 1 ? initial : steps[t - 2].boundary; }
};

enum class ActionSource {
  Sample,  // draw from the policy (training)
  Greedy,  // argmax root, then argmax leaf (testing)
  Replay,  // re-execute the actions stored in `replay`
};

struct RolloutOptions {
  int max_steps = 10;
  ActionSource source = ActionSource::Sample;
  const std::vector<Trajectory>* replay = nullptr;
  reward::Bootstrap bootstrap = reward::Bootstrap::FinalState;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::vector<policy::HeadOutputs> heads;  // one entry per step, rows = episodes
};

// Runs max_steps of encode → act → transition for every episode, recording
// counterfactual IoUs and both rewards. The environment is only touched
// through pure transitions, so counterfactual probes leave no trace.
// `out` is filled progressively, so it holds partial data if this throws.
void rollout(num::Tape& tape, const policy::Model& model, std::span<const data::Episode* const> episodes,
             const env::EnvConfig& env_base, const reward::RewardConfig& reward_cfg, const RolloutOptions& opts,
             Rng& rng, RolloutBatch& out);

/// Constant regression targets and advantages derived from a rollout.
struct Targets {
  std::vector<std::vector<double>> root_returns;
  std::vector<std::vector<double>> leaf_returns;
  std::vector<std::vector<double>> root_advantage;
  std::vector<std::vector<double>> leaf_advantage;
  std::vector<std::vector<double>> align_target;  // clamp(U_{t-1}, 0, 1)
};

Targets compute_targets(const std::vector<Trajectory>& trajectories, const reward::RewardConfig& cfg);

enum class Side { Root, Leaf };

// -(1/M) Σ_m Σ_t [log π(a_t) · A_t + α H(π)], advantages held constant. The
// leaf variant uses only the sub-policy of the branch chosen at each step.
num::Var policy_loss(const RolloutBatch& batch, const Targets& targets, Side side, double entropy_weight);
// (1/M) Σ_m Σ_t (R_t - V)², returns held constant.
num::Var value_loss(const RolloutBatch& batch, const Targets& targets, Side side);
// (1/M) Σ_m Σ_t BCE(σ(C_t), clamp(U_{t-1}, 0, 1)).
num::Var alignment_loss(const RolloutBatch& batch, const Targets& targets);

struct LossWeights {
  double root = 1.0;
  double leaf = 1.0;
  double align = 1.0;
  double entropy = 0.1;
};

struct LossBreakdown {
  num::Var total;
  double root_policy = 0.0;
  double root_value = 0.0;
  double leaf_policy = 0.0;
  double leaf_value = 0.0;
  double align = 0.0;
};

// root·[L_root(π) + L_root(V)] + leaf·[L_leaf(π) + L_leaf(V)] + align·L_align
LossBreakdown assemble_loss(const RolloutBatch& batch, const Targets& targets, const LossWeights& w);

// Parameters that receive an update on an iteration with side `psi`: the
// encoder and alignment head always; the root heads when psi = 1; the leaf
// heads of branches selected at least once in the batch when psi = 0.
std::vector<std::string> trainable_params(const num::ParamStore& store, int psi,
                                          const std::array<bool, env::kBranchCount>& leaf_selected);

struct IterationMetrics {
  std::uint64_t iteration = 0;
  int psi = 0;
  double loss_total = 0.0;
  double loss_root_policy = 0.0;
  double loss_root_value = 0.0;
  double loss_leaf_policy = 0.0;
  double loss_leaf_value = 0.0;
  double loss_align = 0.0;
  double mean_root_reward = 0.0;
  double mean_leaf_reward = 0.0;
  double mean_terminal_iou = 0.0;
  double grad_norm = 0.0;
  std::array<int, env::kBranchCount> branch_counts{};

  nlohmann::json to_json() const;
};

// Raised when a loss or gradient goes non-finite; `dump` describes the batch.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, nlohmann::json dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

nlohmann::json trajectory_to_json(const Trajectory& t);

// One progressive-RL iteration on a fixed batch: rollout, returns, loss with
// ψ(i) weighting, clip, Adam on the trainable subset.
IterationMetrics train_step(std::uint64_t iteration, std::span<const data::Episode* const> batch,
                            policy::Model& model, const TrainConfig& cfg, const reward::RewardConfig& reward_cfg,
                            const env::EnvConfig& env_base, Rng& rng);

/// Owns the iteration counter and random stream across train_step calls.
class Trainer {
 public:
  Trainer(policy::Model& model, std::vector<data::Episode> train_set, TrainConfig cfg,
          reward::RewardConfig reward_cfg, env::EnvConfig env_base);

  IterationMetrics step();

  std::uint64_t iteration() const { return iteration_; }
  const Rng& rng() const { return rng_; }
  void restore(std::uint64_t iteration, Rng rng) {
    iteration_ = iteration;
    rng_ = std::move(rng);
  }

 private:
  policy::Model& model_;
  std::vector<data::Episode> train_set_;
  TrainConfig cfg_;
  reward::RewardConfig reward_cfg_;
  env::EnvConfig env_base_;
  std::uint64_t iteration_ = 0;
  Rng rng_;
};

}  // namespace tsp::train

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsp/encoder.hpp"
#include "tsp/env.hpp"
#include "tsp/numcore/layers.hpp"
#include "tsp/rng.hpp"

namespace tsp::policy {

// Parameter-name prefixes for the three groups the trainer schedules.
inline constexpr const char* kRootPrefix = "policy.root.";
inline constexpr const char* kLeafPrefix = "policy.leaf.";
inline constexpr const char* kAlignPrefix = "align.";
inline constexpr const char* kEncoderPrefix = "encoder.";
std::string leaf_prefix(env::Branch b);

/// Tape handles for every head evaluated on one batch of states.
struct HeadOutputs {
  num::Var root_logits;                              // [M, 5]
  num::Var root_value;                               // [M, 1]
  std::array<num::Var, env::kBranchCount> leaf_logits;  // [M, n_b]
  std::array<num::Var, env::kBranchCount> leaf_value;   // [M, 1]
  num::Var align_logit;                              // [M, 1]
};

/// Plain values of the heads for a single state.
struct HeadValues {
  std::vector<double> root_logits;
  double root_value = 0.0;
  std::array<std::vector<double>, env::kBranchCount> leaf_logits;
  std::array<double, env::kBranchCount> leaf_value{};
  double align_logit = 0.0;
};

HeadValues values_at(const HeadOutputs& out, std::size_t row);

/// Root actor-critic over the five branches, one actor-critic pair per
/// branch for the primitives, and the alignment (stop-confidence) head.
/// Every head is a single linear layer on the recurrent state.
class TreePolicy {
 public:
  explicit TreePolicy(int state_dim);
  static TreePolicy create(num::ParamStore& store, int state_dim, Rng& rng);

  HeadOutputs forward(num::Tape& tape, num::Var state) const;

  const num::DenseLayer& root_policy() const { return root_pi_; }
  const num::DenseLayer& root_value() const { return root_v_; }
  const num::DenseLayer& leaf_policy(env::Branch b) const { return leaf_pi_[static_cast<std::size_t>(b)]; }
  const num::DenseLayer& leaf_value(env::Branch b) const { return leaf_v_[static_cast<std::size_t>(b)]; }
  const num::DenseLayer& alignment() const { return align_; }

 private:
  num::DenseLayer root_pi_;
  num::DenseLayer root_v_;
  std::array<num::DenseLayer, env::kBranchCount> leaf_pi_;
  std::array<num::DenseLayer, env::kBranchCount> leaf_v_;
  num::DenseLayer align_;
};

enum class ActMode { Sample, Greedy };

struct ActDiagnostics {
  num::Categorical root;
  num::Categorical leaf;
  double root_value = 0.0;
  double leaf_value = 0.0;  // value head of the selected branch
  double align_logit = 0.0;
};

struct ActResult {
  env::Branch branch = env::Branch::ScaleVariation;
  env::PrimitiveAction action;
  ActDiagnostics diag;
};

// Branch first, then a primitive from that branch's sub-policy. Greedy mode
// takes argmaxes and never touches `rng`.
ActResult act(const HeadValues& heads, ActMode mode, Rng& rng);

// For each branch, the greedy primitive of its sub-policy, in branch order.
std::array<env::PrimitiveAction, env::kBranchCount> counterfactual_actions(const HeadValues& heads);

/// Encoder + tree policy sharing one parameter store.
struct Model {
  enc::EncoderConfig encoder_config;
  num::ParamStore params;
  enc::Encoder encoder;
  TreePolicy policy;

  Model(const enc::EncoderConfig& cfg, num::ParamStore store);
  static Model create(const enc::EncoderConfig& cfg, std::uint64_t seed);

  // Convenience: run the heads on explicit state rows (no recurrence).
  HeadValues heads_for_state(std::span<const double> state) const;
};

/// Persisted model plus optional trainer state for resuming.
struct Checkpoint {
  enc::EncoderConfig encoder_config;
  env::EnvConfig env_config;  // num_clips/marked_step unused: they follow each episode
  int action_table_version = env::kActionTableVersion;
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::string run_config_json;  // effective config echo
  num::ParamStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds a Model, checking every tensor the config implies is present with
// the right shape. Throws ContractViolation naming both shapes on mismatch.
Model model_from_checkpoint(const Checkpoint& ckpt, const enc::EncoderConfig& expected);

}  // namespace tsp::policy

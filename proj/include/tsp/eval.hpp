#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsp/env.hpp"
#include "tsp/policy.hpp"
#include "tsp/rng.hpp"
#include "tsp/synthdata.hpp"

namespace tsp::eval {

struct StepTrace {
  int t = 0;  // 1-based
  env::Branch branch = env::Branch::ScaleVariation;
  env::PrimitiveAction action;
  env::Boundary boundary;  // after the action
  double iou = 0.0;
  double align_logit = 0.0;
  double confidence = 0.0;  // σ(align_logit)
};

struct EpisodeResult {
  std::string episode_id;
  env::GroundTruth ground_truth;
  env::Boundary initial;
  double u0 = 0.0;
  std::vector<StepTrace> steps;
  int stop_step = 1;        // t*, the boundary reported is the one after t*-1 actions
  env::Boundary boundary;   // reported boundary
  double iou = 0.0;         // signed IoU of `boundary`

  env::Boundary boundary_after(int actions) const { return actions == 0 ? initial : steps[actions - 1].boundary; }
  double iou_after(int actions) const { return actions == 0 ? u0 : steps[actions - 1].iou; }
  // U_{t-1} for 1-based step t.
  double iou_before(int t) const { return iou_after(t - 1); }
  env::Boundary final_boundary() const { return boundary_after(static_cast<int>(steps.size())); }
  double final_iou() const { return iou_after(static_cast<int>(steps.size())); }
};

// t* = first argmax of the alignment logits, 1-based.
int select_stop_step(std::span<const double> align_logits);

// Greedy inference with alignment-based stopping. Deterministic.
EpisodeResult infer_episode(const policy::Model& model, const data::Episode& ep, const env::EnvConfig& env_base,
                            int max_steps);
std::vector<EpisodeResult> infer_all(const policy::Model& model, const std::vector<data::Episode>& episodes,
                                     const env::EnvConfig& env_base, int max_steps, std::size_t chunk = 64);

// Uniform branch, then uniform primitive, for max_steps; reports the final boundary.
EpisodeResult random_episode(const data::Episode& ep, const env::EnvConfig& env_base, int max_steps, Rng& rng);

struct Metrics {
  std::vector<std::pair<double, double>> iou_at;  // (ε, percent with IoU > ε)
  double miou = 0.0;         // percent, negatives clamped to 0
  double miou_signed = 0.0;  // percent, raw signed mean
  std::size_t count = 0;
};

// Throws ContractViolation on empty input.
Metrics compute_metrics(std::span<const double> ious, std::span<const double> thresholds);

std::vector<double> reported_ious(const std::vector<EpisodeResult>& results);
std::vector<double> final_ious(const std::vector<EpisodeResult>& results);

inline constexpr int kIouBuckets = 20;

/// Column-normalised branch selection frequencies. Rows are branches.
struct BranchProportions {
  std::vector<std::vector<double>> by_step;  // [5][T]
  std::vector<std::vector<double>> by_iou;   // [5][20], bucket of U_{t-1}
  std::vector<std::size_t> step_visits;
  std::vector<std::size_t> iou_visits;
};

// Bucket index of an IoU on a 0.05 grid over [0, 1]; negatives fall in 0.
int iou_bucket(double u);

BranchProportions branch_proportions(const std::vector<EpisodeResult>& results, int max_steps);

std::string threshold_key(double eps);

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json build_report(const std::vector<EpisodeResult>& results, const Metrics& metrics,
                            const BranchProportions& props, const nlohmann::json& config_echo);
// One JSON object per step per episode.
std::string traces_jsonl(const std::vector<EpisodeResult>& results);
std::string proportions_csv(const std::vector<std::vector<double>>& matrix, const std::string& column_prefix);
// Human-readable step listing: one header line, one line per step, one footer line.
std::string format_trace(const EpisodeResult& r);

}  // namespace tsp::eval

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace tsp::env {

/// Candidate interval [start, end] in clip units.
struct Boundary {
  double start = 0.0;
  double end = 0.0;

  double width() const { return end - start; }
  double center() const { return 0.5 * (start + end); }

  friend bool operator==(const Boundary&, const Boundary&) = default;
};

struct GroundTruth {
  double start = 0.0;
  double end = 0.0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Order is frozen: policy logits index into it.
enum class Branch : int {
  ScaleVariation = 0,
  MarkedLeftShift = 1,
  MarkedRightShift = 2,
  MarginalLeftAdjust = 3,
  MarginalRightAdjust = 4,
};

inline constexpr int kBranchCount = 5;
inline constexpr std::array<int, kBranchCount> kPrimitiveCounts = {4, 3, 3, 3, 3};
inline constexpr int kPrimitiveCount = 16;
// Bumped whenever branch/primitive ordering changes.
inline constexpr int kActionTableVersion = 1;

// Primitive indices inside the shift/adjust branches.
inline constexpr int kMoveStart = 0;
inline constexpr int kMoveEnd = 1;
inline constexpr int kMoveBoth = 2;

// Scale primitives: extend ×1.2, extend ×1.5, shrink ×1.2, shrink ×1.5.
inline constexpr std::array<double, 4> kScaleFactors = {1.2, 1.5, 1.0 / 1.2, 1.0 / 1.5};

struct PrimitiveAction {
  Branch branch = Branch::ScaleVariation;
  int index = 0;

  friend bool operator==(const PrimitiveAction&, const PrimitiveAction&) = default;
};

Branch branch_from_index(int i);
inline int branch_index(Branch b) { return static_cast<int>(b); }
std::string_view branch_name(Branch b);
std::string primitive_name(const PrimitiveAction& a);
// Flat 0..15 index in branch-major order, and back.
int flat_index(const PrimitiveAction& a);
PrimitiveAction from_flat_index(int i);

enum class ClampMode {
  // Shift-both moves rigidly by the largest feasible translation.
  Rigid,
  // Shift-both moves each endpoint independently and clamps it.
  Independent,
};

struct EnvConfig {
  int num_clips = 0;         // N
  double marked_step = 0.0;  // ν, N/10 by default
  double adjust_step = 1.0;  // marginal adjust step, clip units
  double min_width = 1.0;
  ClampMode clamp = ClampMode::Rigid;

  static EnvConfig for_clips(int n, double adjust_step = 1.0, double min_width = 1.0);
  // Copy of this config re-targeted at an episode with `n` clips (ν = n/10).
  EnvConfig with_clips(int n) const;
  // Throws ContractViolation naming the offending field.
  void validate() const;
};

Boundary initial_boundary(const EnvConfig& cfg);

// Total: every action on a valid boundary yields a valid boundary.
Boundary apply_action(const Boundary& b, const PrimitiveAction& a, const EnvConfig& cfg);

// Signed temporal IoU; negative for disjoint intervals.
double temporal_iou(const Boundary& b, const GroundTruth& g);
double temporal_iou(const Boundary& a, const Boundary& b);

std::vector<PrimitiveAction> enumerate_branch(Branch branch);

bool is_valid(const Boundary& b, const EnvConfig& cfg);

}  // namespace tsp::env

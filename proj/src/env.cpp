#include "tsp/env.hpp"

#include <algorithm>
#include <cmath>

#include "tsp/error.hpp"

namespace tsp::env {

Branch branch_from_index(int i) {
  require(i >= 0 && i < kBranchCount, "branch index out of range: " + std::to_string(i));
  return static_cast<Branch>(i);
}

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::ScaleVariation: return "scale";
    case Branch::MarkedLeftShift: return "left_shift";
    case Branch::MarkedRightShift: return "right_shift";
    case Branch::MarginalLeftAdjust: return "left_adjust";
    case Branch::MarginalRightAdjust: return "right_adjust";
  }
  return "?";
}

std::string primitive_name(const PrimitiveAction& a) {
  static constexpr std::array<const char*, 4> kScale = {"extend_1.2", "extend_1.5", "shrink_1.2", "shrink_1.5"};
  static constexpr std::array<const char*, 3> kMove = {"start", "end", "both"};
  if (a.branch == Branch::ScaleVariation) return kScale.at(static_cast<std::size_t>(a.index));
  return kMove.at(static_cast<std::size_t>(a.index));
}

int flat_index(const PrimitiveAction& a) {
  int off = 0;
  for (int b = 0; b < branch_index(a.branch); ++b) off += kPrimitiveCounts[static_cast<std::size_t>(b)];
  return off + a.index;
}

PrimitiveAction from_flat_index(int i) {
  require(i >= 0 && i < kPrimitiveCount, "flat primitive index out of range");
  for (int b = 0; b < kBranchCount; ++b) {
    const int n = kPrimitiveCounts[static_cast<std::size_t>(b)];
    if (i < n) return {branch_from_index(b), i};
    i -= n;
  }
  return {};
}

EnvConfig EnvConfig::for_clips(int n, double adjust_step, double min_width) {
  EnvConfig c;
  c.num_clips = n;
  c.marked_step = n / 10.0;
  c.adjust_step = adjust_step;
  c.min_width = min_width;
  return c;
}

EnvConfig EnvConfig::with_clips(int n) const {
  EnvConfig c = *this;
  c.num_clips = n;
  c.marked_step = n / 10.0;
  return c;
}

void EnvConfig::validate() const {
  require(num_clips > 0, "env.num_clips must be positive");
  require(adjust_step > 0.0, "env.adjust_step must be positive");
  require(adjust_step < marked_step, "env.adjust_step must be smaller than env.marked_step");
  require(marked_step < num_clips, "env.marked_step must be smaller than env.num_clips");
  require(min_width >= 1.0, "env.min_width must be at least 1 clip");
  require(min_width <= num_clips, "env.min_width must not exceed env.num_clips");
}

bool is_valid(const Boundary& b, const EnvConfig& cfg) {
  // Small slack: repeated shifts by ν accumulate rounding.
  constexpr double kSlack = 1e-9;
  return b.start >= 0.0 && b.end <= cfg.num_clips && b.start < b.end && b.width() >= cfg.min_width - kSlack;
}

Boundary initial_boundary(const EnvConfig& cfg) {
  const double n = cfg.num_clips;
  return {n / 4.0, 3.0 * n / 4.0};
}

namespace {

Boundary apply_scale(const Boundary& b, int index, const EnvConfig& cfg) {
  const double n = cfg.num_clips;
  const double w = std::clamp(b.width() * kScaleFactors.at(static_cast<std::size_t>(index)), cfg.min_width, n);
  const double c = b.center();
  Boundary out{c - 0.5 * w, c + 0.5 * w};
  if (out.start < 0.0) out = {0.0, w};
  if (out.end > n) out = {n - w, n};
  return out;
}

Boundary apply_move(const Boundary& b, int index, double delta, const EnvConfig& cfg) {
  const double n = cfg.num_clips;
  switch (index) {
    case kMoveStart: {
      double s = std::clamp(b.start + delta, 0.0, n);
      if (b.end - s < cfg.min_width) s = b.end - cfg.min_width;
      return {s, b.end};
    }
    case kMoveEnd: {
      double e = std::clamp(b.end + delta, 0.0, n);
      if (e - b.start < cfg.min_width) e = b.start + cfg.min_width;
      return {b.start, e};
    }
    case kMoveBoth: {
      if (cfg.clamp == ClampMode::Rigid) {
        const double d = std::clamp(delta, -b.start, n - b.end);
        return {b.start + d, b.end + d};
      }
      double s = std::clamp(b.start + delta, 0.0, n);
      double e = std::clamp(b.end + delta, 0.0, n);
      if (e - s < cfg.min_width) {
        if (delta < 0.0)
          e = s + cfg.min_width;
        else
          s = e - cfg.min_width;
      }
      return {s, e};
    }
    default:
      throw ContractViolation("move primitive index out of range: " + std::to_string(index));
  }
}

}  // namespace

Boundary apply_action(const Boundary& b, const PrimitiveAction& a, const EnvConfig& cfg) {
  require(a.index >= 0 && a.index < kPrimitiveCounts[static_cast<std::size_t>(branch_index(a.branch))],
          "primitive index out of range for branch " + std::string(branch_name(a.branch)));
  switch (a.branch) {
    case Branch::ScaleVariation: return apply_scale(b, a.index, cfg);
    case Branch::MarkedLeftShift: return apply_move(b, a.index, -cfg.marked_step, cfg);
    case Branch::MarkedRightShift: return apply_move(b, a.index, cfg.marked_step, cfg);
    case Branch::MarginalLeftAdjust: return apply_move(b, a.index, -cfg.adjust_step, cfg);
    case Branch::MarginalRightAdjust: return apply_move(b, a.index, cfg.adjust_step, cfg);
  }
  return b;
}

double temporal_iou(const Boundary& b, const GroundTruth& g) {
  const double inter = std::min(g.end, b.end) - std::max(g.start, b.start);
  const double uni = std::max(g.end, b.end) - std::min(g.start, b.start);
  return inter / uni;
}

double temporal_iou(const Boundary& a, const Boundary& b) { return temporal_iou(a, GroundTruth{b.start, b.end}); }

std::vector<PrimitiveAction> enumerate_branch(Branch branch) {
  std::vector<PrimitiveAction> out;
  const int n = kPrimitiveCounts[static_cast<std::size_t>(branch_index(branch))];
  for (int i = 0; i < n; ++i) out.push_back({branch, i});
  return out;
}

}  // namespace tsp::env

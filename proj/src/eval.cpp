#include "tsp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "tsp/error.hpp"
#include "tsp/trainer.hpp"

namespace tsp::eval {

int select_stop_step(std::span<const double> align_logits) {
  require(!align_logits.empty(), "stop selection needs at least one step");
  // Compared on logits: σ is strictly increasing but saturates in floating point.
  return static_cast<int>(num::argmax_first(align_logits)) + 1;
}

namespace {

EpisodeResult from_trajectory(const train::Trajectory& tr) {
  EpisodeResult r;
  r.episode_id = tr.episode_id;
  r.ground_truth = tr.ground_truth;
  r.initial = tr.initial;
  r.u0 = tr.u0;
  std::vector<double> logits;
  for (std::size_t i = 0; i < tr.steps.size(); ++i) {
    const auto& s = tr.steps[i];
    StepTrace st;
    st.t = static_cast<int>(i + 1);
    st.branch = s.branch;
    st.action = s.action;
    st.boundary = s.boundary;
    st.iou = s.iou;
    st.align_logit = s.align_logit;
    st.confidence = 1.0 / (1.0 + std::exp(-s.align_logit));
    r.steps.push_back(st);
    logits.push_back(s.align_logit);
  }
  r.stop_step = select_stop_step(logits);
  r.boundary = r.boundary_after(r.stop_step - 1);
  r.iou = r.iou_after(r.stop_step - 1);
  return r;
}

}  // namespace

std::vector<EpisodeResult> infer_all(const policy::Model& model, const std::vector<data::Episode>& episodes,
                                     const env::EnvConfig& env_base, int max_steps, std::size_t chunk) {
  require(chunk > 0, "inference chunk must be positive");
  std::vector<EpisodeResult> out;
  out.reserve(episodes.size());
  Rng unused(0);
  const reward::RewardConfig rcfg;
  for (std::size_t lo = 0; lo < episodes.size(); lo += chunk) {
    const std::size_t hi = std::min(episodes.size(), lo + chunk);
    std::vector<const data::Episode*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&episodes[i]);
    num::Tape tape(&model.params);
    train::RolloutOptions opts;
    opts.max_steps = max_steps;
    opts.source = train::ActionSource::Greedy;
    train::RolloutBatch rb;
    train::rollout(tape, model, batch, env_base, rcfg, opts, unused, rb);
    for (const auto& tr : rb.trajectories) out.push_back(from_trajectory(tr));
  }
  return out;
}

EpisodeResult infer_episode(const policy::Model& model, const data::Episode& ep, const env::EnvConfig& env_base,
                            int max_steps) {
  return infer_all(model, {ep}, env_base, max_steps).front();
}

EpisodeResult random_episode(const data::Episode& ep, const env::EnvConfig& env_base, int max_steps, Rng& rng) {
  require(max_steps > 0, "max_steps must be positive");
  EpisodeResult r;
  const env::EnvConfig cfg = env_base.with_clips(ep.num_clips());
  r.episode_id = ep.id;
  r.ground_truth = ep.ground_truth;
  r.initial = env::initial_boundary(cfg);
  r.u0 = env::temporal_iou(r.initial, r.ground_truth);
  env::Boundary b = r.initial;
  for (int t = 1; t <= max_steps; ++t) {
    StepTrace st;
    st.t = t;
    st.branch = env::branch_from_index(static_cast<int>(rng.below(env::kBranchCount)));
    const auto n = env::kPrimitiveCounts[static_cast<std::size_t>(env::branch_index(st.branch))];
    st.action = {st.branch, static_cast<int>(rng.below(static_cast<std::uint64_t>(n)))};
    b = env::apply_action(b, st.action, cfg);
    st.boundary = b;
    st.iou = env::temporal_iou(b, r.ground_truth);
    st.confidence = 0.5;
    r.steps.push_back(st);
  }
  r.stop_step = max_steps + 1;
  r.boundary = r.final_boundary();
  r.iou = r.final_iou();
  return r;
}

Metrics compute_metrics(std::span<const double> ious, std::span<const double> thresholds) {
  require(!ious.empty(), "compute_metrics needs at least one result");
  Metrics m;
  m.count = ious.size();
  const double n = static_cast<double>(ious.size());
  for (double eps : thresholds) {
    const auto hits = std::count_if(ious.begin(), ious.end(), [eps](double u) { return u > eps; });
    m.iou_at.emplace_back(eps, 100.0 * static_cast<double>(hits) / n);
  }
  double clamped = 0.0, raw = 0.0;
  for (double u : ious) {
    clamped += std::max(u, 0.0);
    raw += u;
  }
  m.miou = 100.0 * clamped / n;
  m.miou_signed = 100.0 * raw / n;
  return m;
}

std::vector<double> reported_ious(const std::vector<EpisodeResult>& results) {
  std::vector<double> out;
  for (const auto& r : results) out.push_back(r.iou);
  return out;
}

std::vector<double> final_ious(const std::vector<EpisodeResult>& results) {
  std::vector<double> out;
  for (const auto& r : results) out.push_back(r.final_iou());
  return out;
}

int iou_bucket(double u) {
  const double c = std::clamp(u, 0.0, 1.0);
  return std::min(kIouBuckets - 1, static_cast<int>(std::floor(c * kIouBuckets)));
}

namespace {

void normalise_columns(std::vector<std::vector<double>>& m, const std::vector<std::size_t>& visits) {
  for (std::size_t c = 0; c < visits.size(); ++c) {
    if (visits[c] == 0) continue;
    for (auto& row : m) row[c] /= static_cast<double>(visits[c]);
  }
}

}  // namespace

BranchProportions branch_proportions(const std::vector<EpisodeResult>& results, int max_steps) {
  require(max_steps > 0, "max_steps must be positive");
  BranchProportions p;
  p.by_step.assign(env::kBranchCount, std::vector<double>(static_cast<std::size_t>(max_steps), 0.0));
  p.by_iou.assign(env::kBranchCount, std::vector<double>(kIouBuckets, 0.0));
  p.step_visits.assign(static_cast<std::size_t>(max_steps), 0);
  p.iou_visits.assign(kIouBuckets, 0);
  for (const auto& r : results) {
    for (const auto& s : r.steps) {
      require(s.t >= 1 && s.t <= max_steps, "trace step outside [1, max_steps]");
      const auto b = static_cast<std::size_t>(env::branch_index(s.branch));
      const auto col = static_cast<std::size_t>(s.t - 1);
      p.by_step[b][col] += 1.0;
      ++p.step_visits[col];
      const auto bucket = static_cast<std::size_t>(iou_bucket(r.iou_before(s.t)));
      p.by_iou[b][bucket] += 1.0;
      ++p.iou_visits[bucket];
    }
  }
  normalise_columns(p.by_step, p.step_visits);
  normalise_columns(p.by_iou, p.iou_visits);
  return p;
}

std::string threshold_key(double eps) {
  std::ostringstream ss;
  ss << "IoU@" << eps;
  return ss.str();
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  nlohmann::json at = nlohmann::json::object();
  for (const auto& [eps, v] : m.iou_at) at[threshold_key(eps)] = v;
  j["iou_at"] = at;
  j["miou"] = m.miou;
  j["miou_signed"] = m.miou_signed;
  j["count"] = m.count;
  return j;
}

nlohmann::json build_report(const std::vector<EpisodeResult>& results, const Metrics& metrics,
                            const BranchProportions& props, const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["config"] = config_echo;
  j["metrics"] = metrics_to_json(metrics);
  double stop = 0.0;
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& r : results) {
    stop += r.stop_step;
    eps.push_back({{"episode_id", r.episode_id},
                   {"boundary", {r.boundary.start, r.boundary.end}},
                   {"iou", r.iou},
                   {"stop_step", r.stop_step}});
  }
  j["metrics"]["mean_stop_step"] = results.empty() ? 0.0 : stop / static_cast<double>(results.size());
  j["episodes"] = eps;
  j["branch_proportions"] = {{"branches", {"scale", "left_shift", "right_shift", "left_adjust", "right_adjust"}},
                             {"by_step", props.by_step},
                             {"by_iou", props.by_iou},
                             {"step_visits", props.step_visits},
                             {"iou_visits", props.iou_visits}};
  return j;
}

std::string traces_jsonl(const std::vector<EpisodeResult>& results) {
  std::string out;
  for (const auto& r : results) {
    for (const auto& s : r.steps) {
      nlohmann::json j = {{"episode_id", r.episode_id},
                          {"t", s.t},
                          {"branch", env::branch_name(s.branch)},
                          {"primitive", env::primitive_name(s.action)},
                          {"boundary", {s.boundary.start, s.boundary.end}},
                          {"iou", s.iou},
                          {"confidence", s.confidence},
                          {"stop", s.t == r.stop_step - 1}};
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

std::string proportions_csv(const std::vector<std::vector<double>>& matrix, const std::string& column_prefix) {
  std::ostringstream ss;
  ss << std::setprecision(17) << "branch";
  const std::size_t cols = matrix.empty() ? 0 : matrix.front().size();
  for (std::size_t c = 0; c < cols; ++c) ss << ',' << column_prefix << c;
  ss << '\n';
  for (std::size_t b = 0; b < matrix.size(); ++b) {
    ss << env::branch_name(env::branch_from_index(static_cast<int>(b)));
    for (double v : matrix[b]) ss << ',' << v;
    ss << '\n';
  }
  return ss.str();
}

std::string format_trace(const EpisodeResult& r) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  auto bnd = [&](const env::Boundary& b) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4) << '[' << b.start << ", " << b.end << ']';
    return o.str();
  };
  ss << "episode " << r.episode_id << " gt=" << bnd({r.ground_truth.start, r.ground_truth.end})
     << " initial=" << bnd(r.initial) << " U=" << r.u0 << (r.stop_step == 1 ? " <stop>" : "") << '\n';
  for (const auto& s : r.steps) {
    ss << "t=" << s.t << " branch=" << env::branch_name(s.branch) << " primitive=" << env::primitive_name(s.action)
       << " boundary=" << bnd(s.boundary) << " U=" << s.iou << " conf=" << s.confidence
       << (s.t == r.stop_step - 1 ? " <stop>" : "") << '\n';
  }
  ss << "stop t*=" << r.stop_step << " boundary=" << bnd(r.boundary) << " U=" << r.iou << '\n';
  return ss.str();
}

}  // namespace tsp::eval

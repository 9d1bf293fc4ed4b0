#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tsp/error.hpp"
#include "tsp/eval.hpp"
#include "tsp/trainer.hpp"

using namespace tsp;
using namespace tsp::eval;

namespace {

enc::EncoderConfig tiny_encoder() {
  enc::EncoderConfig c;
  c.unit_dim = 4;
  c.query_dim = 3;
  c.k_samples = 4;
  c.state_dim = 6;
  c.hidden_dim = 6;
  return c;
}

data::GenSpec tiny_gen(std::uint64_t seed) {
  data::GenSpec g;
  g.num_clips = 16;
  g.unit_dim = 4;
  g.query_dim = 3;
  g.latent_dim = 3;
  g.min_gt_width = 2;
  g.max_gt_width = 8;
  g.seed = seed;
  return g;
}

const env::EnvConfig kEnv = env::EnvConfig::for_clips(16);

EpisodeResult scripted(const std::vector<int>& branches, const std::vector<double>& ious) {
  EpisodeResult r;
  r.u0 = ious.front();
  for (std::size_t i = 0; i < branches.size(); ++i) {
    StepTrace s;
    s.t = static_cast<int>(i + 1);
    s.branch = env::branch_from_index(branches[i]);
    s.action = {s.branch, 0};
    s.iou = ious[i + 1];
    r.steps.push_back(s);
  }
  return r;
}

void expect_columns_normalised(const std::vector<std::vector<double>>& m, const std::vector<std::size_t>& visits) {
  for (std::size_t c = 0; c < visits.size(); ++c) {
    double s = 0;
    for (int b = 0; b < 5; ++b) {
      EXPECT_GE(m[b][c], 0.0);
      s += m[b][c];
    }
    if (visits[c] == 0)
      EXPECT_EQ(s, 0.0);
    else
      EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

}  // namespace

TEST(StopStep, ArgmaxOfConfidence) {
  EXPECT_EQ(select_stop_step(std::vector<double>{-2, 3, 0}), 2);
  EXPECT_EQ(select_stop_step(std::vector<double>{0.4, 0.4, 0.4}), 1);
  EXPECT_EQ(select_stop_step(std::vector<double>{-1, 5, 5, 2}), 2);
  EXPECT_EQ(select_stop_step(std::vector<double>{-3, -2, -1}), 3);
}

TEST(Metrics, CountingExamples) {
  const std::vector<double> eps = {0.5};
  Metrics m = compute_metrics(std::vector<double>{0.8, 0.4, 0.6}, eps);
  EXPECT_NEAR(m.iou_at[0].second, 200.0 / 3.0, 1e-12);
  EXPECT_EQ(m.count, 3u);

  m = compute_metrics(std::vector<double>{1, 1, 1, 1}, std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.99});
  for (const auto& [e, v] : m.iou_at) EXPECT_EQ(v, 100.0) << e;
  EXPECT_EQ(m.miou, 100.0);

  m = compute_metrics(std::vector<double>{-0.5, 0.5}, eps);
  EXPECT_DOUBLE_EQ(m.miou, 25.0);
  EXPECT_DOUBLE_EQ(m.miou_signed, 0.0);
}

TEST(Metrics, StrictThreshold) {
  const Metrics m = compute_metrics(std::vector<double>{0.5, 0.5000001}, std::vector<double>{0.5});
  EXPECT_EQ(m.iou_at[0].second, 50.0);
}

TEST(Metrics, EmptyInputIsContractViolation) {
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{0.5}), ContractViolation);
}

TEST(Metrics, NonIncreasingInThresholdAndBounded) {
  Rng rng(3);
  std::vector<double> eps;
  for (int i = 0; i < 50; ++i) eps.push_back(i / 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> u(1 + rng.below(40));
    for (double& x : u) x = rng.uniform(-1, 1);
    const Metrics m = compute_metrics(u, eps);
    for (std::size_t i = 0; i < m.iou_at.size(); ++i) {
      EXPECT_GE(m.iou_at[i].second, 0.0);
      EXPECT_LE(m.iou_at[i].second, 100.0);
      if (i > 0) EXPECT_LE(m.iou_at[i].second, m.iou_at[i - 1].second);
    }
    EXPECT_GE(m.miou, 0.0);
    EXPECT_GE(m.miou, m.miou_signed);
    EXPECT_GE(m.miou_signed, -100.0);
  }
}

TEST(IouBucket, Grid) {
  EXPECT_EQ(iou_bucket(-0.3), 0);
  EXPECT_EQ(iou_bucket(0.0), 0);
  EXPECT_EQ(iou_bucket(0.049), 0);
  EXPECT_EQ(iou_bucket(0.05), 1);
  EXPECT_EQ(iou_bucket(0.51), 10);
  EXPECT_EQ(iou_bucket(1.0), 19);
}

TEST(Proportions, SingleBranchTrace) {
  const EpisodeResult r = scripted({0, 0, 0, 0}, {0.1, 0.2, 0.3, 0.4, 0.5});
  const BranchProportions p = branch_proportions({r}, 4);
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(p.by_step[0][t], 1.0);
    for (int b = 1; b < 5; ++b) EXPECT_EQ(p.by_step[b][t], 0.0);
  }
  // Buckets of U_{t-1}: 0.1, 0.2, 0.3, 0.4.
  for (int k : {2, 4, 6, 8}) EXPECT_EQ(p.by_iou[0][k], 1.0);
  EXPECT_EQ(p.iou_visits[10], 0u);
  expect_columns_normalised(p.by_iou, p.iou_visits);
}

TEST(Proportions, UniformRandomPolicyNearOneFifth) {
  const auto eps = data::Generator(tiny_gen(1)).generate_many(1000);
  Rng rng(0);
  std::vector<EpisodeResult> rs;
  for (const auto& e : eps) rs.push_back(random_episode(e, kEnv, 10, rng));
  const BranchProportions p = branch_proportions(rs, 10);
  std::size_t total = 0;
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(p.step_visits[t], 1000u);
    total += p.step_visits[t];
  }
  EXPECT_EQ(total, 10000u);
  expect_columns_normalised(p.by_step, p.step_visits);
  expect_columns_normalised(p.by_iou, p.iou_visits);
  for (int b = 0; b < 5; ++b) {
    for (std::size_t t = 0; t < 10; ++t) EXPECT_NEAR(p.by_step[b][t], 0.2, 3 * std::sqrt(0.16 / 1000)) << b << "," << t;
    for (int k = 0; k < kIouBuckets; ++k)
      if (p.iou_visits[k] > 0)
        EXPECT_NEAR(p.by_iou[b][k], 0.2, 3 * std::sqrt(0.16 / p.iou_visits[k])) << b << ", bucket " << k;
  }
}

TEST(RandomBaseline, ReportsFinalBoundary) {
  const auto eps = data::Generator(tiny_gen(2)).generate_many(20);
  Rng rng(5);
  for (const auto& e : eps) {
    const EpisodeResult r = random_episode(e, kEnv, 6, rng);
    ASSERT_EQ(r.steps.size(), 6u);
    EXPECT_EQ(r.boundary, r.final_boundary());
    EXPECT_EQ(r.iou, r.final_iou());
  }
}

TEST(Inference, ReplayConsistency) {
  const auto eps = data::Generator(tiny_gen(3)).generate_many(30);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const policy::Model m = policy::Model::create(tiny_encoder(), seed);
    for (const auto& e : eps) {
      const EpisodeResult r = infer_episode(m, e, kEnv, 8);
      ASSERT_EQ(r.steps.size(), 8u);
      std::vector<double> logits;
      for (const auto& s : r.steps) logits.push_back(s.align_logit);
      EXPECT_EQ(r.stop_step, select_stop_step(logits));
      // Replay the first t*-1 recorded greedy actions from the initial boundary.
      const env::EnvConfig ec = kEnv.with_clips(e.num_clips());
      env::Boundary b = env::initial_boundary(ec);
      EXPECT_EQ(b, r.initial);
      for (int t = 0; t + 1 < r.stop_step; ++t) b = env::apply_action(b, r.steps[t].action, ec);
      EXPECT_EQ(b, r.boundary);
      EXPECT_EQ(r.iou, env::temporal_iou(b, e.ground_truth));
      EXPECT_EQ(r.iou, r.iou_before(r.stop_step));
      for (const auto& s : r.steps) EXPECT_NEAR(s.confidence, 1 / (1 + std::exp(-s.align_logit)), 1e-15);
    }
  }
}

TEST(Inference, MatchesGreedyTrainingRollout) {
  const auto eps = data::Generator(tiny_gen(4)).generate_many(5);
  const policy::Model m = policy::Model::create(tiny_encoder(), 7);
  std::vector<const data::Episode*> p;
  for (const auto& e : eps) p.push_back(&e);
  num::Tape tape(&m.params);
  train::RolloutOptions o;
  o.max_steps = 6;
  o.source = train::ActionSource::Greedy;
  train::RolloutBatch rb;
  Rng rng(0);
  train::rollout(tape, m, p, kEnv, reward::RewardConfig{}, o, rng, rb);
  const auto rs = infer_all(m, eps, kEnv, 6);
  for (std::size_t e = 0; e < eps.size(); ++e)
    for (std::size_t t = 0; t < 6; ++t) {
      EXPECT_EQ(rs[e].steps[t].action, rb.trajectories[e].steps[t].action);
      EXPECT_EQ(rs[e].steps[t].boundary, rb.trajectories[e].steps[t].boundary);
      EXPECT_NEAR(rs[e].steps[t].align_logit, rb.trajectories[e].steps[t].align_logit, 1e-12);
    }
}

TEST(Inference, DeterministicAndIndependentOfChunking) {
  const auto eps = data::Generator(tiny_gen(5)).generate_many(40);
  const policy::Model m = policy::Model::create(tiny_encoder(), 11);
  const auto a = infer_all(m, eps, kEnv, 5, 64);
  const auto b = infer_all(m, eps, kEnv, 5, 64);
  const auto c = infer_all(m, eps, kEnv, 5, 7);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(traces_jsonl(a), traces_jsonl(b));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].stop_step, c[i].stop_step);
    EXPECT_EQ(a[i].boundary, c[i].boundary);
  }
}

TEST(Inference, OverfitOneEpisodeStopsOnPerfectInitialBoundary) {
  auto ep = data::Generator(tiny_gen(6)).generate_many(1).front();
  ep.ground_truth = {4, 12};
  policy::Model m = policy::Model::create(tiny_encoder(), 3);
  train::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_steps = 5;
  cfg.learning_rate = 1e-2;
  train::Trainer tr(m, {ep}, cfg, reward::RewardConfig{}, kEnv);
  for (int i = 0; i < 300; ++i) tr.step();
  const EpisodeResult r = infer_episode(m, ep, kEnv, 5);
  EXPECT_EQ(r.stop_step, 1);
  EXPECT_EQ(r.boundary, (env::Boundary{4, 12}));
  EXPECT_EQ(r.iou, 1.0);
}

TEST(Report, ShapeAndKeys) {
  const auto eps = data::Generator(tiny_gen(7)).generate_many(6);
  const policy::Model m = policy::Model::create(tiny_encoder(), 2);
  const auto rs = infer_all(m, eps, kEnv, 4);
  const std::vector<double> th = {0.1, 0.3, 0.5, 0.7};
  const Metrics met = compute_metrics(reported_ious(rs), th);
  const auto rep = build_report(rs, met, branch_proportions(rs, 4), {{"seed", 1}});
  EXPECT_EQ(rep.at("metrics").at("iou_at").size(), 4u);
  for (const char* k : {"IoU@0.1", "IoU@0.3", "IoU@0.5", "IoU@0.7"})
    EXPECT_TRUE(rep.at("metrics").at("iou_at").contains(k)) << k;
  EXPECT_TRUE(rep.at("metrics").contains("miou"));
  EXPECT_EQ(rep.at("episodes").size(), 6u);
  EXPECT_TRUE(rep.at("metrics").contains("mean_stop_step"));
  EXPECT_EQ(rep.at("branch_proportions").at("by_step").size(), 5u);
  EXPECT_EQ(rep.at("branch_proportions").at("by_iou").at(0).size(), 20u);
  EXPECT_EQ(threshold_key(0.5), "IoU@0.5");
  EXPECT_EQ(threshold_key(0.25), "IoU@0.25");

  std::istringstream lines(traces_jsonl(rs));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"t", "branch", "primitive", "boundary", "iou", "confidence"}) EXPECT_TRUE(j.contains(k)) << k;
    ++n;
  }
  EXPECT_EQ(n, 24);

  const std::string csv = proportions_csv(branch_proportions(rs, 4).by_step, "t");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(Report, TraceFormatLineCount) {
  const auto eps = data::Generator(tiny_gen(8)).generate_many(1);
  const policy::Model m = policy::Model::create(tiny_encoder(), 2);
  const EpisodeResult r = infer_episode(m, eps[0], kEnv, 7);
  const std::string s = format_trace(r);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 9);
  EXPECT_NE(s.find("<stop>"), std::string::npos);
}

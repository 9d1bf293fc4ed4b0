#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tsp/error.hpp"
#include "tsp/numcore/gradcheck.hpp"
#include "tsp/numcore/optim.hpp"
#include "tsp/trainer.hpp"

using namespace tsp;
using namespace tsp::train;

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

data::GenSpec tiny_gen(std::uint64_t seed = 0) {
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

std::vector<const data::Episode*> ptrs(const std::vector<data::Episode>& eps) {
  std::vector<const data::Episode*> p;
  for (const auto& e : eps) p.push_back(&e);
  return p;
}

const env::EnvConfig kEnv = env::EnvConfig::for_clips(16);

RolloutBatch run(num::Tape& tape, const policy::Model& m, const std::vector<data::Episode>& eps, int steps,
                 Rng& rng, ActionSource src = ActionSource::Sample, const std::vector<Trajectory>* replay = nullptr,
                 reward::Bootstrap boot = reward::Bootstrap::FinalState) {
  RolloutOptions o;
  o.max_steps = steps;
  o.source = src;
  o.replay = replay;
  o.bootstrap = boot;
  RolloutBatch rb;
  rollout(tape, m, ptrs(eps), kEnv, reward::RewardConfig{}, o, rng, rb);
  return rb;
}

Targets zero_targets(const RolloutBatch& rb) {
  Targets t;
  for (const auto& tr : rb.trajectories) {
    const std::vector<double> z(tr.steps.size(), 0.0);
    t.root_returns.push_back(z);
    t.leaf_returns.push_back(z);
    t.root_advantage.push_back(z);
    t.leaf_advantage.push_back(z);
    t.align_target.push_back(z);
  }
  return t;
}

bool same_tensors(const num::ParamStore& a, const num::ParamStore& b, const std::string& name) {
  return a.get(name) == b.get(name) && a.moments(name).first == b.moments(name).first &&
         a.moments(name).second == b.moments(name).second && a.moments(name).step == b.moments(name).step;
}

}  // namespace

TEST(Schedule, AlternatesEveryPeriod) {
  EXPECT_EQ(train_side(0, 200), 0);
  EXPECT_EQ(train_side(199, 200), 0);
  EXPECT_EQ(train_side(200, 200), 1);
  EXPECT_EQ(train_side(399, 200), 1);
  EXPECT_EQ(train_side(400, 200), 0);
  for (std::uint64_t i = 0; i < 40; ++i) EXPECT_EQ(train_side(i, 1), static_cast<int>(i % 2));
  EXPECT_THROW(train_side(3, 0), ContractViolation);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.alternation_period = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
}

TEST(Rollout, FixedLengthAndConsistentGeometry) {
  const auto eps = data::Generator(tiny_gen(1)).generate_many(6);
  const policy::Model m = policy::Model::create(tiny_encoder(), 3);
  Rng rng(2);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 7, rng);
  ASSERT_EQ(rb.trajectories.size(), 6u);
  ASSERT_EQ(rb.heads.size(), 7u);
  const reward::RewardConfig rc;
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const Trajectory& tr = rb.trajectories[e];
    ASSERT_EQ(tr.steps.size(), 7u);
    EXPECT_EQ(tr.initial, (env::Boundary{4, 12}));
    EXPECT_NEAR(tr.u0, env::temporal_iou(tr.initial, tr.ground_truth), 1e-12);
    for (std::size_t t = 1; t <= tr.steps.size(); ++t) {
      const StepRecord& s = tr.steps[t - 1];
      const env::Boundary expect = env::apply_action(tr.boundary_before(t), s.action, tr.env);
      EXPECT_NEAR(s.boundary.start, expect.start, 1e-12);
      EXPECT_NEAR(s.boundary.end, expect.end, 1e-12);
      EXPECT_TRUE(env::is_valid(s.boundary, tr.env));
      EXPECT_NEAR(s.iou, env::temporal_iou(s.boundary, tr.ground_truth), 1e-12);
      EXPECT_EQ(s.action.branch, s.branch);
      // Executed action is the candidate of its own branch.
      const auto bi = static_cast<std::size_t>(env::branch_index(s.branch));
      EXPECT_EQ(s.candidates[bi], s.action);
      EXPECT_EQ(s.candidate_iou[bi], s.iou);
      EXPECT_EQ(s.u_max, *std::max_element(s.candidate_iou.begin(), s.candidate_iou.end()));
      EXPECT_EQ(s.leaf_reward, reward::leaf_reward(tr.iou_before(t), s.iou, rc));
      EXPECT_EQ(s.root_reward, reward::root_reward(tr.iou_before(t), s.iou, s.u_max, rc));
      // Recorded head values match the tape.
      const policy::HeadValues hv = policy::values_at(rb.heads[t - 1], e);
      EXPECT_EQ(s.root_value, hv.root_value);
      EXPECT_EQ(s.leaf_value, hv.leaf_value[bi]);
      EXPECT_EQ(s.align_logit, hv.align_logit);
    }
  }
}

TEST(Rollout, SameSeedSameTrajectories) {
  const auto eps = data::Generator(tiny_gen(4)).generate_many(5);
  const policy::Model m = policy::Model::create(tiny_encoder(), 8);
  auto dump = [&](std::uint64_t seed) {
    Rng rng(seed);
    num::Tape tape(&m.params);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& tr : run(tape, m, eps, 6, rng).trajectories) j.push_back(trajectory_to_json(tr));
    return j.dump();
  };
  EXPECT_EQ(dump(10), dump(10));
  EXPECT_NE(dump(10), dump(11));
}

TEST(Rollout, ReplayReproducesActionsAndValues) {
  const auto eps = data::Generator(tiny_gen(5)).generate_many(4);
  const policy::Model m = policy::Model::create(tiny_encoder(), 9);
  Rng rng(3);
  num::Tape t1(&m.params);
  const RolloutBatch a = run(t1, m, eps, 5, rng);
  Rng other(99);
  num::Tape t2(&m.params);
  const RolloutBatch b = run(t2, m, eps, 5, other, ActionSource::Replay, &a.trajectories);
  for (std::size_t e = 0; e < eps.size(); ++e)
    for (std::size_t t = 0; t < 5; ++t) {
      const StepRecord &x = a.trajectories[e].steps[t], &y = b.trajectories[e].steps[t];
      EXPECT_EQ(x.action, y.action);
      EXPECT_EQ(x.boundary, y.boundary);
      EXPECT_EQ(x.root_log_prob, y.root_log_prob);
      EXPECT_EQ(x.leaf_log_prob, y.leaf_log_prob);
      EXPECT_EQ(x.root_value, y.root_value);
    }
  EXPECT_EQ(other.serialize(), Rng(99).serialize());
}

TEST(Rollout, DimensionMismatchIsContractViolation) {
  data::GenSpec g = tiny_gen();
  g.unit_dim = 5;
  const auto eps = data::Generator(g).generate_many(2);
  const policy::Model m = policy::Model::create(tiny_encoder(), 1);
  Rng rng(0);
  num::Tape tape(&m.params);
  EXPECT_THROW(run(tape, m, eps, 3, rng), ContractViolation);
}

TEST(Rollout, StartingOnGroundTruthGivesNegativeLeafReward) {
  auto eps = data::Generator(tiny_gen(6)).generate_many(8);
  for (auto& e : eps) e.ground_truth = {4, 12};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const policy::Model m = policy::Model::create(tiny_encoder(), seed);
    Rng rng(seed);
    num::Tape tape(&m.params);
    for (const auto& tr : run(tape, m, eps, 2, rng).trajectories) {
      EXPECT_DOUBLE_EQ(tr.u0, 1.0);
      EXPECT_LT(tr.steps[0].leaf_reward, 0.0);
      EXPECT_LT(tr.steps[0].iou, 1.0);
    }
  }
}

TEST(Targets, ReturnsFollowRecursionWithFinalStateBootstrap) {
  const auto eps = data::Generator(tiny_gen(7)).generate_many(4);
  const policy::Model m = policy::Model::create(tiny_encoder(), 2);
  Rng rng(1);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 6, rng);
  const reward::RewardConfig rc;
  const Targets tg = compute_targets(rb.trajectories, rc);
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const auto& st = rb.trajectories[e].steps;
    double root_next = st.back().root_value, leaf_next = st.back().leaf_value;
    for (std::size_t t = st.size(); t-- > 0;) {
      const double rr = st[t].root_reward + rc.gamma * root_next;
      const double rl = st[t].leaf_reward + rc.gamma * leaf_next;
      EXPECT_NEAR(tg.root_returns[e][t], rr, 1e-12);
      EXPECT_NEAR(tg.leaf_returns[e][t], rl, 1e-12);
      EXPECT_NEAR(tg.root_advantage[e][t], rr - st[t].root_value, 1e-12);
      EXPECT_NEAR(tg.leaf_advantage[e][t], rl - st[t].leaf_value, 1e-12);
      EXPECT_EQ(tg.align_target[e][t], std::clamp(rb.trajectories[e].iou_before(t + 1), 0.0, 1.0));
      root_next = rr;
      leaf_next = rl;
    }
  }
}

TEST(Targets, SuccessorBootstrapUsesPostTerminalValues) {
  const auto eps = data::Generator(tiny_gen(8)).generate_many(3);
  const policy::Model m = policy::Model::create(tiny_encoder(), 4);
  Rng rng(5);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 4, rng, ActionSource::Sample, nullptr, reward::Bootstrap::Successor);
  reward::RewardConfig rc;
  rc.bootstrap = reward::Bootstrap::Successor;
  const Targets tg = compute_targets(rb.trajectories, rc);
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const Trajectory& tr = rb.trajectories[e];
    EXPECT_NE(tr.successor_root_value, 0.0);
    EXPECT_NEAR(tg.root_returns[e].back(), tr.steps.back().root_reward + rc.gamma * tr.successor_root_value, 1e-12);
    EXPECT_NEAR(tg.leaf_returns[e].back(), tr.steps.back().leaf_reward + rc.gamma * tr.successor_leaf_value, 1e-12);
  }
}

TEST(PolicyLoss, ZeroWithoutAdvantageOrEntropy) {
  const auto eps = data::Generator(tiny_gen(9)).generate_many(3);
  const policy::Model m = policy::Model::create(tiny_encoder(), 5);
  Rng rng(0);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 4, rng);
  const Targets z = zero_targets(rb);
  EXPECT_EQ(policy_loss(rb, z, Side::Root, 0.0).value().item(), 0.0);
  EXPECT_EQ(policy_loss(rb, z, Side::Leaf, 0.0).value().item(), 0.0);
}

TEST(PolicyLoss, MatchesRecordedLogProbsAndEntropies) {
  const auto eps = data::Generator(tiny_gen(10)).generate_many(5);
  const policy::Model m = policy::Model::create(tiny_encoder(), 6);
  Rng rng(7);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 4, rng);
  Targets tg = zero_targets(rb);
  Rng adv(1);
  double root = 0, leaf = 0;
  const double alpha = 0.3;
  for (std::size_t e = 0; e < eps.size(); ++e)
    for (std::size_t t = 0; t < 4; ++t) {
      tg.root_advantage[e][t] = adv.normal();
      tg.leaf_advantage[e][t] = adv.normal();
      const StepRecord& s = rb.trajectories[e].steps[t];
      root += s.root_log_prob * tg.root_advantage[e][t] + alpha * s.root_entropy;
      leaf += s.leaf_log_prob * tg.leaf_advantage[e][t] + alpha * s.leaf_entropy;
    }
  EXPECT_NEAR(policy_loss(rb, tg, Side::Root, alpha).value().item(), -root / 5, 1e-12);
  EXPECT_NEAR(policy_loss(rb, tg, Side::Leaf, alpha).value().item(), -leaf / 5, 1e-12);
}

TEST(PolicyLoss, PositiveAdvantageStepRaisesTakenActionLogProb) {
  const auto eps = data::Generator(tiny_gen(11)).generate_many(4);
  policy::Model m = policy::Model::create(tiny_encoder(), 7);
  Rng rng(8);
  num::Tape t0(&m.params);
  const RolloutBatch rb = run(t0, m, eps, 3, rng);
  Targets tg = zero_targets(rb);
  for (auto& row : tg.root_advantage) std::fill(row.begin(), row.end(), 1.0);
  auto loss = [&](num::Tape& t) {
    Rng r(0);
    return policy_loss(run(t, m, eps, 3, r, ActionSource::Replay, &rb.trajectories), tg, Side::Root, 0.0);
  };
  num::Gradients g;
  const double before = num::evaluate_with_grads(loss, m.params, g);
  for (const auto& n : m.params.names_with_prefix("policy.root.pi."))
    for (std::size_t i = 0; i < g[n].size(); ++i) m.params.get(n)[i] -= 0.1 * g[n][i];
  num::Gradients g2;
  EXPECT_LT(num::evaluate_with_grads(loss, m.params, g2), before);
}

TEST(PolicyLoss, EntropyOnlyTrainingRaisesEntropy) {
  const auto eps = data::Generator(tiny_gen(12)).generate_many(4);
  policy::Model m = policy::Model::create(tiny_encoder(), 8);
  auto& bias = m.params.get("policy.root.pi.b");
  bias[0] = 3.0;
  bias[4] = -2.0;
  Rng rng(9);
  num::Tape t0(&m.params);
  const RolloutBatch rb = run(t0, m, eps, 3, rng);
  const Targets tg = zero_targets(rb);
  auto mean_entropy = [&](const RolloutBatch& b) {
    double s = 0;
    for (const auto& tr : b.trajectories)
      for (const auto& st : tr.steps) s += st.root_entropy;
    return s / 12;
  };
  const double start = mean_entropy(rb);
  const std::vector<std::string> names = m.params.names_with_prefix("policy.root.pi.");
  num::AdamConfig adam;
  adam.lr = 1e-2;
  double end = start;
  for (int i = 0; i < 200; ++i) {
    num::Tape t(&m.params);
    Rng r(0);
    const RolloutBatch b = run(t, m, eps, 3, r, ActionSource::Replay, &rb.trajectories);
    end = mean_entropy(b);
    t.backward(policy_loss(b, tg, Side::Root, 1.0));
    num::adam_update(m.params, t.param_grads(), names, adam);
  }
  EXPECT_GT(end, start + 0.1);
  EXPECT_LE(end, std::log(5.0) + 1e-12);
}

TEST(ValueLoss, ZeroWhenValuesEqualReturns) {
  const auto eps = data::Generator(tiny_gen(13)).generate_many(3);
  const policy::Model m = policy::Model::create(tiny_encoder(), 9);
  Rng rng(2);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 4, rng);
  Targets tg = zero_targets(rb);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t t = 0; t < 4; ++t) {
      tg.root_returns[e][t] = rb.trajectories[e].steps[t].root_value;
      tg.leaf_returns[e][t] = rb.trajectories[e].steps[t].leaf_value;
    }
  EXPECT_EQ(value_loss(rb, tg, Side::Root).value().item(), 0.0);
  EXPECT_EQ(value_loss(rb, tg, Side::Leaf).value().item(), 0.0);
}

TEST(ValueLoss, UnitErrorGivesUnitLoss) {
  const auto eps = data::Generator(tiny_gen(14)).generate_many(3);
  policy::Model m = policy::Model::create(tiny_encoder(), 10);
  for (const auto& n : m.params.names())
    if (n.find(".v.") != std::string::npos) m.params.get(n).fill(0.0);
  Rng rng(2);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 1, rng);
  Targets tg = zero_targets(rb);
  for (auto& r : tg.root_returns) r[0] = 1.0;
  for (auto& r : tg.leaf_returns) r[0] = 1.0;
  EXPECT_DOUBLE_EQ(value_loss(rb, tg, Side::Root).value().item(), 1.0);
  EXPECT_DOUBLE_EQ(value_loss(rb, tg, Side::Leaf).value().item(), 1.0);
}

TEST(ValueLoss, GradientsStayOffPolicyHeadsAndViceVersa) {
  const auto eps = data::Generator(tiny_gen(15)).generate_many(3);
  policy::Model m = policy::Model::create(tiny_encoder(), 11);
  Rng rng(3);
  num::Tape t0(&m.params);
  const RolloutBatch rb = run(t0, m, eps, 3, rng);
  const Targets tg = compute_targets(rb.trajectories, reward::RewardConfig{});
  auto grads_of = [&](auto&& fn) {
    num::Gradients g;
    num::evaluate_with_grads(
        [&](num::Tape& t) {
          Rng r(0);
          return fn(run(t, m, eps, 3, r, ActionSource::Replay, &rb.trajectories));
        },
        m.params, g);
    return g;
  };
  auto norm = [](const num::Gradients& g, const std::string& needle) {
    double s = 0;
    for (const auto& [n, t] : g)
      if (n.find(needle) != std::string::npos)
        for (double v : t.data()) s += v * v;
    return s;
  };
  const auto gv = grads_of([&](const RolloutBatch& b) {
    return num::add(value_loss(b, tg, Side::Root), value_loss(b, tg, Side::Leaf));
  });
  EXPECT_EQ(norm(gv, ".pi."), 0.0);
  EXPECT_EQ(norm(gv, "align."), 0.0);
  EXPECT_GT(norm(gv, ".v."), 0.0);
  const auto gp = grads_of([&](const RolloutBatch& b) {
    return num::add(policy_loss(b, tg, Side::Root, 0.1), policy_loss(b, tg, Side::Leaf, 0.1));
  });
  EXPECT_EQ(norm(gp, ".v."), 0.0);
  EXPECT_GT(norm(gp, ".pi."), 0.0);
}

TEST(AlignmentLoss, LogTwoAtHalfTargetAndZeroLogit) {
  const auto eps = data::Generator(tiny_gen(16)).generate_many(2);
  policy::Model m = policy::Model::create(tiny_encoder(), 12);
  m.params.get("align.c.w").fill(0.0);
  m.params.get("align.c.b").fill(0.0);
  Rng rng(0);
  num::Tape tape(&m.params);
  const RolloutBatch rb = run(tape, m, eps, 1, rng);
  Targets tg = zero_targets(rb);
  for (auto& a : tg.align_target) a[0] = 0.5;
  EXPECT_NEAR(alignment_loss(rb, tg).value().item(), std::log(2.0), 1e-15);
}

TEST(AlignmentLoss, MinimisedWhenSigmoidMatchesTarget) {
  const auto eps = data::Generator(tiny_gen(17)).generate_many(2);
  policy::Model m = policy::Model::create(tiny_encoder(), 13);
  m.params.get("align.c.w").fill(0.0);
  for (double u : {0.05, 0.3, 0.8}) {
    auto at = [&](double bias) {
      m.params.get("align.c.b").fill(bias);
      Rng rng(0);
      num::Tape tape(&m.params);
      const RolloutBatch rb = run(tape, m, eps, 2, rng);
      Targets tg = zero_targets(rb);
      for (auto& a : tg.align_target) std::fill(a.begin(), a.end(), u);
      return alignment_loss(rb, tg).value().item();
    };
    const double opt = std::log(u / (1 - u));
    EXPECT_LT(at(opt), at(opt + 0.05));
    EXPECT_LT(at(opt), at(opt - 0.05));
  }
}

TEST(FullLoss, GradientsMatchFiniteDifferencesUnderReplay) {
  enc::EncoderConfig ec = tiny_encoder();
  ec.state_dim = 8;
  ec.hidden_dim = 8;
  const auto eps = data::Generator(tiny_gen(18)).generate_many(2);
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    policy::Model m = policy::Model::create(ec, seed);
    Rng rng(seed);
    num::Tape t0(&m.params);
    const RolloutBatch rb = run(t0, m, eps, 3, rng);
    const Targets tg = compute_targets(rb.trajectories, reward::RewardConfig{});
    auto loss = [&](num::Tape& t) {
      Rng r(0);
      return assemble_loss(run(t, m, eps, 3, r, ActionSource::Replay, &rb.trajectories), tg, LossWeights{}).total;
    };
    num::GradCheckOptions o;
    o.seed = seed;
    o.min_coords = 300;
    const auto rep = num::finite_difference_check(loss, m.params, o);
    EXPECT_TRUE(rep.passed) << rep.worst_param << "[" << rep.worst_index << "] " << rep.max_rel_error;
    EXPECT_GE(rep.coords_checked, 300u);
  }
}

TEST(TrainStep, FrozenSideIsBitwiseUnchanged) {
  const auto eps = data::Generator(tiny_gen(19)).generate_many(6);
  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.max_steps = 4;
  cfg.alternation_period = 200;
  for (std::uint64_t it : {0ull, 200ull}) {
    policy::Model m = policy::Model::create(tiny_encoder(), 14);
    const num::ParamStore before = m.params;
    Rng rng(1);
    const IterationMetrics met = train_step(it, ptrs(eps), m, cfg, reward::RewardConfig{}, kEnv, rng);
    EXPECT_EQ(met.psi, train_side(it, 200));
    for (const auto& n : m.params.names()) {
      const bool root = n.rfind(policy::kRootPrefix, 0) == 0;
      const bool leaf = n.rfind("policy.leaf.", 0) == 0;
      if (met.psi == 1 ? leaf : root)
        EXPECT_TRUE(same_tensors(before, m.params, n)) << n << " changed on psi=" << met.psi;
      if (n.rfind("encoder.", 0) == 0 || n.rfind("align.", 0) == 0 || (met.psi == 1 ? root : false))
        EXPECT_FALSE(m.params.get(n) == before.get(n)) << n << " did not move";
    }
  }
}

TEST(TrainStep, OnlyTheSelectedBranchLeafMoves) {
  const auto eps = data::Generator(tiny_gen(20)).generate_many(4);
  policy::Model m = policy::Model::create(tiny_encoder(), 15);
  m.params.get("policy.root.pi.b")[2] = 60.0;
  const num::ParamStore before = m.params;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_steps = 3;
  Rng rng(4);
  const IterationMetrics met = train_step(0, ptrs(eps), m, cfg, reward::RewardConfig{}, kEnv, rng);
  EXPECT_EQ(met.branch_counts, (std::array<int, 5>{0, 0, 12, 0, 0}));
  for (int b = 0; b < 5; ++b)
    for (const auto& n : m.params.names_with_prefix(policy::leaf_prefix(env::branch_from_index(b)))) {
      if (b == 2)
        EXPECT_FALSE(m.params.get(n) == before.get(n)) << n;
      else
        EXPECT_TRUE(same_tensors(before, m.params, n)) << n;
    }
}

TEST(TrainStep, TrainableSets) {
  const policy::Model m = policy::Model::create(tiny_encoder(), 0);
  const auto root = trainable_params(m.params, 1, {});
  const auto leaf = trainable_params(m.params, 0, {true, false, false, false, true});
  EXPECT_TRUE(std::is_sorted(root.begin(), root.end()));
  auto has = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  EXPECT_TRUE(has(root, "policy.root.pi.w"));
  EXPECT_TRUE(has(root, "encoder.gru.w_hh"));
  EXPECT_TRUE(has(root, "align.c.b"));
  EXPECT_FALSE(has(root, "policy.leaf.0.pi.w"));
  EXPECT_TRUE(has(leaf, "policy.leaf.0.pi.w"));
  EXPECT_TRUE(has(leaf, "policy.leaf.4.v.b"));
  EXPECT_FALSE(has(leaf, "policy.leaf.1.pi.w"));
  EXPECT_FALSE(has(leaf, "policy.root.v.w"));
}

TEST(TrainStep, NonFiniteParametersRaiseDivergence) {
  const auto eps = data::Generator(tiny_gen(21)).generate_many(2);
  policy::Model m = policy::Model::create(tiny_encoder(), 16);
  m.params.get("encoder.phi.b")[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 2;
  Rng rng(0);
  try {
    train_step(37, ptrs(eps), m, cfg, reward::RewardConfig{}, kEnv, rng);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.dump().at("iteration"), 37);
    EXPECT_EQ(e.dump().at("episodes").size(), 2u);
  }
}

TEST(Trainer, SameSeedSameParameterTrajectory) {
  const auto eps = data::Generator(tiny_gen(22)).generate_many(20);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.max_steps = 4;
  cfg.alternation_period = 5;
  cfg.seed = 42;
  auto train = [&](std::uint64_t seed, int iters) {
    TrainConfig c = cfg;
    c.seed = seed;
    policy::Model m = policy::Model::create(tiny_encoder(), 1);
    Trainer tr(m, eps, c, reward::RewardConfig{}, kEnv);
    std::vector<num::ParamStore> snaps;
    for (int i = 0; i < iters; ++i) {
      tr.step();
      snaps.push_back(m.params);
    }
    return snaps;
  };
  const auto a = train(42, 20), b = train(42, 20), c = train(43, 20);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]) << "iteration " << i;
  EXPECT_FALSE(a.back() == c.back());
}

TEST(Trainer, ResumeFromRestoredStateMatchesUninterrupted) {
  const auto eps = data::Generator(tiny_gen(23)).generate_many(10);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 3;
  cfg.alternation_period = 3;
  policy::Model full = policy::Model::create(tiny_encoder(), 2);
  Trainer t1(full, eps, cfg, reward::RewardConfig{}, kEnv);
  for (int i = 0; i < 10; ++i) t1.step();

  policy::Model part = policy::Model::create(tiny_encoder(), 2);
  Trainer t2(part, eps, cfg, reward::RewardConfig{}, kEnv);
  for (int i = 0; i < 4; ++i) t2.step();
  policy::Model resumed(part.encoder_config, part.params);
  Trainer t3(resumed, eps, cfg, reward::RewardConfig{}, kEnv);
  t3.restore(t2.iteration(), Rng::deserialize(t2.rng().serialize()));
  for (int i = 0; i < 6; ++i) t3.step();
  EXPECT_EQ(t3.iteration(), 10u);
  EXPECT_TRUE(resumed.params == full.params);
}

TEST(IterationMetrics, JsonCarriesAllFields) {
  IterationMetrics m;
  m.iteration = 3;
  m.psi = 1;
  m.branch_counts = {1, 2, 3, 4, 5};
  const auto j = m.to_json();
  for (const char* k : {"iteration", "psi", "loss_total", "loss_align", "mean_terminal_iou", "grad_norm",
                        "branch_counts"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["branch_counts"][4], 5);
}

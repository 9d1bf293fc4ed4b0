#include "tsp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "tsp/encoder.hpp"
#include "tsp/error.hpp"
#include "tsp/numcore/optim.hpp"

namespace tsp::train {

void TrainConfig::validate() const {
  require(batch_size > 0, "train.batch_size must be positive");
  require(max_steps > 0, "train.max_steps must be positive");
  require(alternation_period >= 1, "train.alternation_period must be >= 1");
  require(entropy_weight >= 0.0, "train.entropy_weight must be non-negative");
  require(align_weight >= 0.0, "train.align_weight must be non-negative");
  require(learning_rate > 0.0, "train.learning_rate must be positive");
  require(total_iterations > 0, "train.total_iterations must be positive");
}

int train_side(std::uint64_t iteration, int period) {
  require(period >= 1, "alternation period must be >= 1");
  return static_cast<int>((iteration / static_cast<std::uint64_t>(period)) % 2);
}

// ---- Rollout ---------------------------------------------------------------

namespace {

num::Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t m = rows.size(), n = rows.front().size();
  std::vector<double> flat;
  flat.reserve(m * n);
  for (const auto& r : rows) {
    require(r.size() == n, "ragged batch rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return num::Tensor({m, n}, std::move(flat));
}

num::Categorical replayed(std::span<const double> logits, int index) {
  num::Categorical c = num::softmax_greedy(logits);
  c.sample = static_cast<std::size_t>(index);
  return c;
}

}  // namespace

void rollout(num::Tape& tape, const policy::Model& model, std::span<const data::Episode* const> episodes,
             const env::EnvConfig& env_base, const reward::RewardConfig& reward_cfg, const RolloutOptions& opts,
             Rng& rng, RolloutBatch& out) {
  require(!episodes.empty(), "rollout needs at least one episode");
  require(opts.max_steps > 0, "rollout needs max_steps > 0");
  if (opts.source == ActionSource::Replay) {
    require(opts.replay != nullptr && opts.replay->size() == episodes.size(), "replay trajectories do not match batch");
    for (const auto& tr : *opts.replay)
      require(tr.steps.size() == static_cast<std::size_t>(opts.max_steps), "replay trajectory length mismatch");
  }
  const auto& ecfg = model.encoder_config;
  const std::size_t m_count = episodes.size();
  const int k = ecfg.k_samples;

  out.trajectories.clear();
  out.heads.clear();
  std::vector<env::Boundary> bnd(m_count);
  std::vector<std::vector<double>> global_rows, query_rows;
  for (const data::Episode* ep : episodes) {
    require(ep->unit_dim() == static_cast<std::size_t>(ecfg.unit_dim),
            "episode '" + ep->id + "' unit dim " + std::to_string(ep->unit_dim()) + " does not match encoder " +
                std::to_string(ecfg.unit_dim));
    require(ep->query_dim() == static_cast<std::size_t>(ecfg.query_dim),
            "episode '" + ep->id + "' query dim " + std::to_string(ep->query_dim()) + " does not match encoder " +
                std::to_string(ecfg.query_dim));
    Trajectory tr;
    tr.episode_id = ep->id;
    tr.ground_truth = ep->ground_truth;
    tr.env = env_base.with_clips(ep->num_clips());
    tr.initial = env::initial_boundary(tr.env);
    tr.u0 = env::temporal_iou(tr.initial, tr.ground_truth);
    bnd[out.trajectories.size()] = tr.initial;
    global_rows.push_back(enc::sample_interval_features(*ep, {0.0, static_cast<double>(ep->num_clips())}, k));
    query_rows.push_back(ep->query);
    out.trajectories.push_back(std::move(tr));
  }

  const num::Var v_global = tape.constant(rows_tensor(global_rows));
  const num::Var query = tape.constant(rows_tensor(query_rows));
  num::Var hidden = tape.constant(num::Tensor({m_count, static_cast<std::size_t>(ecfg.hidden_dim)}));

  auto encode = [&]() {
    std::vector<std::vector<double>> cur_rows, lnorm_rows;
    for (std::size_t m = 0; m < m_count; ++m) {
      cur_rows.push_back(enc::sample_interval_features(*episodes[m], bnd[m], k));
      const double n = episodes[m]->num_clips();
      lnorm_rows.push_back({bnd[m].start / n, bnd[m].end / n});
    }
    num::Var pre = model.encoder.fuse(tape, v_global, tape.constant(rows_tensor(cur_rows)),
                                      tape.constant(rows_tensor(lnorm_rows)), query);
    hidden = model.encoder.recurrent(tape, pre, hidden);
    return model.policy.forward(tape, hidden);
  };

  for (int t = 1; t <= opts.max_steps; ++t) {
    policy::HeadOutputs heads = encode();
    out.heads.push_back(heads);
    for (std::size_t m = 0; m < m_count; ++m) {
      Trajectory& tr = out.trajectories[m];
      const policy::HeadValues hv = policy::values_at(heads, m);
      policy::ActResult a;
      if (opts.source == ActionSource::Replay) {
        const StepRecord& old = (*opts.replay)[m].steps[static_cast<std::size_t>(t - 1)];
        a.branch = old.branch;
        a.action = old.action;
        const auto bi = static_cast<std::size_t>(env::branch_index(a.branch));
        a.diag.root = replayed(hv.root_logits, static_cast<int>(bi));
        a.diag.leaf = replayed(hv.leaf_logits[bi], a.action.index);
        a.diag.root_value = hv.root_value;
        a.diag.leaf_value = hv.leaf_value[bi];
        a.diag.align_logit = hv.align_logit;
      } else {
        a = policy::act(hv, opts.source == ActionSource::Sample ? policy::ActMode::Sample : policy::ActMode::Greedy,
                        rng);
      }

      StepRecord s;
      const auto srow = hidden.value().row(m);
      s.state.assign(srow.begin(), srow.end());
      s.branch = a.branch;
      s.action = a.action;
      s.root_probs = a.diag.root.probs;
      s.leaf_probs = a.diag.leaf.probs;
      s.root_log_prob = a.diag.root.log_probs[a.diag.root.sample];
      s.root_entropy = a.diag.root.entropy;
      s.leaf_log_prob = a.diag.leaf.log_probs[a.diag.leaf.sample];
      s.leaf_entropy = a.diag.leaf.entropy;
      s.root_value = a.diag.root_value;
      s.leaf_value = a.diag.leaf_value;
      s.align_logit = a.diag.align_logit;

      // The selected branch is scored by the primitive actually executed, the
      // others by their greedy primitive, so U_t is always among the candidates.
      s.candidates = policy::counterfactual_actions(hv);
      s.candidates[static_cast<std::size_t>(env::branch_index(a.branch))] = a.action;
      const reward::BranchIous probe = reward::compute_u_max(tr.ground_truth, bnd[m], s.candidates, tr.env);
      s.candidate_iou = probe.per_branch;
      s.u_max = probe.u_max;

      const double u_prev = tr.steps.empty() ? tr.u0 : tr.steps.back().iou;
      s.boundary = env::apply_action(bnd[m], a.action, tr.env);
      s.iou = env::temporal_iou(s.boundary, tr.ground_truth);
      s.leaf_reward = reward::leaf_reward(u_prev, s.iou, reward_cfg);
      s.root_reward = reward::root_reward(u_prev, s.iou, s.u_max, reward_cfg);
      bnd[m] = s.boundary;
      tr.steps.push_back(std::move(s));
    }
  }

  if (opts.bootstrap == reward::Bootstrap::Successor) {
    // Extra encoder step on the final boundaries; values only, never trained.
    const policy::HeadOutputs heads = encode();
    for (std::size_t m = 0; m < m_count; ++m) {
      const policy::HeadValues hv = policy::values_at(heads, m);
      out.trajectories[m].successor_root_value = hv.root_value;
      out.trajectories[m].successor_leaf_value = hv.leaf_value[num::argmax_first(hv.root_logits)];
    }
  }
}

// ---- Targets and losses -------------------------------------------------------

Targets compute_targets(const std::vector<Trajectory>& trajectories, const reward::RewardConfig& cfg) {
  Targets tg;
  for (const Trajectory& tr : trajectories) {
    const std::size_t n = tr.steps.size();
    std::vector<double> rr(n), rl(n);
    for (std::size_t t = 0; t < n; ++t) {
      rr[t] = tr.steps[t].root_reward;
      rl[t] = tr.steps[t].leaf_reward;
    }
    const bool succ = cfg.bootstrap == reward::Bootstrap::Successor;
    const double term_r = succ ? tr.successor_root_value : tr.steps.back().root_value;
    const double term_l = succ ? tr.successor_leaf_value : tr.steps.back().leaf_value;
    auto R_r = reward::accumulate_returns(rr, term_r, cfg.gamma);
    auto R_l = reward::accumulate_returns(rl, term_l, cfg.gamma);
    std::vector<double> a_r(n), a_l(n), u(n);
    for (std::size_t t = 0; t < n; ++t) {
      a_r[t] = R_r[t] - tr.steps[t].root_value;
      a_l[t] = R_l[t] - tr.steps[t].leaf_value;
      u[t] = std::clamp(tr.iou_before(t + 1), 0.0, 1.0);
    }
    tg.root_returns.push_back(std::move(R_r));
    tg.leaf_returns.push_back(std::move(R_l));
    tg.root_advantage.push_back(std::move(a_r));
    tg.leaf_advantage.push_back(std::move(a_l));
    tg.align_target.push_back(std::move(u));
  }
  return tg;
}

namespace {

num::Tensor column(std::size_t m_count, const auto& f) {
  num::Tensor c({m_count, 1});
  for (std::size_t m = 0; m < m_count; ++m) c[m] = f(m);
  return c;
}

num::Var accumulate(std::optional<num::Var>& acc, num::Var term) {
  acc = acc ? num::add(*acc, term) : term;
  return *acc;
}

void check_batch(const RolloutBatch& batch, const Targets& targets) {
  require(!batch.heads.empty(), "loss needs a non-empty rollout");
  require(targets.root_returns.size() == batch.trajectories.size(), "targets do not match rollout batch");
}

}  // namespace

num::Var policy_loss(const RolloutBatch& batch, const Targets& targets, Side side, double entropy_weight) {
  check_batch(batch, targets);
  const std::size_t m_count = batch.trajectories.size();
  std::optional<num::Var> acc;
  for (std::size_t t = 0; t < batch.heads.size(); ++t) {
    const policy::HeadOutputs& h = batch.heads[t];
    if (side == Side::Root) {
      std::vector<int> idx(m_count);
      for (std::size_t m = 0; m < m_count; ++m) idx[m] = env::branch_index(batch.trajectories[m].steps[t].branch);
      num::Var logp = num::pick_rows(num::log_softmax_rows(h.root_logits), idx);
      num::Var adv = num::mul_const(logp, column(m_count, [&](std::size_t m) { return targets.root_advantage[m][t]; }));
      accumulate(acc, num::add(adv, num::scale(num::entropy_rows(h.root_logits), entropy_weight)));
    } else {
      for (int b = 0; b < env::kBranchCount; ++b) {
        std::vector<int> idx(m_count, -1);
        bool any = false;
        for (std::size_t m = 0; m < m_count; ++m) {
          const StepRecord& s = batch.trajectories[m].steps[t];
          if (env::branch_index(s.branch) == b) {
            idx[m] = s.action.index;
            any = true;
          }
        }
        if (!any) continue;
        const num::Var& logits = h.leaf_logits[static_cast<std::size_t>(b)];
        const num::Tensor mask = column(m_count, [&](std::size_t m) { return idx[m] >= 0 ? 1.0 : 0.0; });
        num::Var logp = num::pick_rows(num::log_softmax_rows(logits), idx);
        num::Var adv = num::mul_const(
            logp, column(m_count, [&](std::size_t m) { return idx[m] >= 0 ? targets.leaf_advantage[m][t] : 0.0; }));
        num::Var ent = num::mul_const(num::entropy_rows(logits), mask);
        accumulate(acc, num::add(adv, num::scale(ent, entropy_weight)));
      }
    }
  }
  return num::scale(num::sum_all(*acc), -1.0 / static_cast<double>(m_count));
}

num::Var value_loss(const RolloutBatch& batch, const Targets& targets, Side side) {
  check_batch(batch, targets);
  const std::size_t m_count = batch.trajectories.size();
  num::Tape& tape = batch.heads.front().root_value.tape();
  std::optional<num::Var> acc;
  for (std::size_t t = 0; t < batch.heads.size(); ++t) {
    const policy::HeadOutputs& h = batch.heads[t];
    if (side == Side::Root) {
      num::Var target = tape.constant(column(m_count, [&](std::size_t m) { return targets.root_returns[m][t]; }));
      accumulate(acc, num::square(num::sub(target, h.root_value)));
    } else {
      for (int b = 0; b < env::kBranchCount; ++b) {
        const num::Tensor mask = column(m_count, [&](std::size_t m) {
          return env::branch_index(batch.trajectories[m].steps[t].branch) == b ? 1.0 : 0.0;
        });
        if (std::all_of(mask.data().begin(), mask.data().end(), [](double x) { return x == 0.0; })) continue;
        num::Var target = tape.constant(column(m_count, [&](std::size_t m) { return targets.leaf_returns[m][t]; }));
        num::Var err = num::square(num::sub(target, h.leaf_value[static_cast<std::size_t>(b)]));
        accumulate(acc, num::mul_const(err, mask));
      }
    }
  }
  return num::scale(num::sum_all(*acc), 1.0 / static_cast<double>(m_count));
}

num::Var alignment_loss(const RolloutBatch& batch, const Targets& targets) {
  check_batch(batch, targets);
  const std::size_t m_count = batch.trajectories.size();
  std::optional<num::Var> acc;
  for (std::size_t t = 0; t < batch.heads.size(); ++t) {
    const num::Tensor u = column(m_count, [&](std::size_t m) { return targets.align_target[m][t]; });
    accumulate(acc, num::bce_with_logits(batch.heads[t].align_logit, u));
  }
  return num::scale(num::sum_all(*acc), 1.0 / static_cast<double>(m_count));
}

LossBreakdown assemble_loss(const RolloutBatch& batch, const Targets& targets, const LossWeights& w) {
  LossBreakdown out;
  const num::Var rp = policy_loss(batch, targets, Side::Root, w.entropy);
  const num::Var rv = value_loss(batch, targets, Side::Root);
  const num::Var lp = policy_loss(batch, targets, Side::Leaf, w.entropy);
  const num::Var lv = value_loss(batch, targets, Side::Leaf);
  const num::Var al = alignment_loss(batch, targets);
  out.root_policy = rp.value().item();
  out.root_value = rv.value().item();
  out.leaf_policy = lp.value().item();
  out.leaf_value = lv.value().item();
  out.align = al.value().item();
  out.total = num::add(num::add(num::scale(num::add(rp, rv), w.root), num::scale(num::add(lp, lv), w.leaf)),
                       num::scale(al, w.align));
  return out;
}

std::vector<std::string> trainable_params(const num::ParamStore& store, int psi,
                                          const std::array<bool, env::kBranchCount>& leaf_selected) {
  std::vector<std::string> names = store.names_with_prefix(policy::kEncoderPrefix);
  for (const auto& n : store.names_with_prefix(policy::kAlignPrefix)) names.push_back(n);
  if (psi == 1) {
    for (const auto& n : store.names_with_prefix(policy::kRootPrefix)) names.push_back(n);
  } else {
    for (int b = 0; b < env::kBranchCount; ++b) {
      if (!leaf_selected[static_cast<std::size_t>(b)]) continue;
      for (const auto& n : store.names_with_prefix(policy::leaf_prefix(env::branch_from_index(b)))) names.push_back(n);
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

nlohmann::json IterationMetrics::to_json() const {
  return {{"iteration", iteration},
          {"psi", psi},
          {"loss_total", loss_total},
          {"loss_root_policy", loss_root_policy},
          {"loss_root_value", loss_root_value},
          {"loss_leaf_policy", loss_leaf_policy},
          {"loss_leaf_value", loss_leaf_value},
          {"loss_align", loss_align},
          {"mean_root_reward", mean_root_reward},
          {"mean_leaf_reward", mean_leaf_reward},
          {"mean_terminal_iou", mean_terminal_iou},
          {"grad_norm", grad_norm},
          {"branch_counts", branch_counts}};
}

nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const StepRecord& s = t.steps[i];
    steps.push_back({{"t", i + 1},
                     {"branch", env::branch_name(s.branch)},
                     {"primitive", env::primitive_name(s.action)},
                     {"boundary", {s.boundary.start, s.boundary.end}},
                     {"iou", s.iou},
                     {"root_reward", s.root_reward},
                     {"leaf_reward", s.leaf_reward},
                     {"root_value", s.root_value},
                     {"leaf_value", s.leaf_value},
                     {"align_logit", s.align_logit},
                     {"root_probs", s.root_probs},
                     {"leaf_probs", s.leaf_probs},
                     {"u_max", s.u_max}});
  }
  return {{"episode_id", t.episode_id},
          {"ground_truth", {t.ground_truth.start, t.ground_truth.end}},
          {"initial", {t.initial.start, t.initial.end}},
          {"u0", t.u0},
          {"steps", steps}};
}

// ---- Training step -----------------------------------------------------------

IterationMetrics train_step(std::uint64_t iteration, std::span<const data::Episode* const> batch,
                            policy::Model& model, const TrainConfig& cfg, const reward::RewardConfig& reward_cfg,
                            const env::EnvConfig& env_base, Rng& rng) {
  IterationMetrics met;
  met.iteration = iteration;
  met.psi = train_side(iteration, cfg.alternation_period);

  RolloutBatch rb;
  auto dump = [&](const std::string& why) {
    nlohmann::json d;
    d["iteration"] = iteration;
    d["reason"] = why;
    d["episodes"] = nlohmann::json::array();
    for (const auto* ep : batch) d["episodes"].push_back(ep->id);
    d["trajectories"] = nlohmann::json::array();
    for (const auto& tr : rb.trajectories) d["trajectories"].push_back(trajectory_to_json(tr));
    return d;
  };

  try {
    num::Tape tape(&model.params);
    RolloutOptions opts;
    opts.max_steps = cfg.max_steps;
    opts.source = ActionSource::Sample;
    opts.bootstrap = reward_cfg.bootstrap;
    rollout(tape, model, batch, env_base, reward_cfg, opts, rng, rb);

    const Targets tg = compute_targets(rb.trajectories, reward_cfg);
    LossWeights w;
    w.root = met.psi == 1 ? 1.0 : 0.0;
    w.leaf = 1.0 - w.root;
    w.align = cfg.align_weight;
    w.entropy = cfg.entropy_weight;
    const LossBreakdown loss = assemble_loss(rb, tg, w);
    met.loss_total = loss.total.value().item();
    met.loss_root_policy = loss.root_policy;
    met.loss_root_value = loss.root_value;
    met.loss_leaf_policy = loss.leaf_policy;
    met.loss_leaf_value = loss.leaf_value;
    met.loss_align = loss.align;
    if (!std::isfinite(met.loss_total)) throw NumericError("non-finite loss");

    tape.backward(loss.total);
    num::Gradients grads = tape.param_grads();

    std::array<bool, env::kBranchCount> selected{};
    double rr = 0.0, rl = 0.0, term = 0.0;
    std::size_t steps = 0;
    for (const Trajectory& tr : rb.trajectories) {
      for (const StepRecord& s : tr.steps) {
        const auto b = static_cast<std::size_t>(env::branch_index(s.branch));
        selected[b] = true;
        ++met.branch_counts[b];
        rr += s.root_reward;
        rl += s.leaf_reward;
        ++steps;
      }
      term += tr.steps.back().iou;
    }
    met.mean_root_reward = rr / static_cast<double>(steps);
    met.mean_leaf_reward = rl / static_cast<double>(steps);
    met.mean_terminal_iou = term / static_cast<double>(rb.trajectories.size());

    const auto names = trainable_params(model.params, met.psi, selected);
    met.grad_norm = num::clip_global_norm(grads, names, cfg.grad_clip);
    if (!std::isfinite(met.grad_norm)) throw NumericError("non-finite gradient norm");
    num::AdamConfig adam;
    adam.lr = cfg.learning_rate;
    num::adam_update(model.params, grads, names, adam);
  } catch (const NumericError& e) {
    throw TrainingDiverged(std::string("training diverged at iteration ") + std::to_string(iteration) + ": " +
                               e.what(),
                           dump(e.what()));
  }
  return met;
}

Trainer::Trainer(policy::Model& model, std::vector<data::Episode> train_set, TrainConfig cfg,
                 reward::RewardConfig reward_cfg, env::EnvConfig env_base)
    : model_(model),
      train_set_(std::move(train_set)),
      cfg_(cfg),
      reward_cfg_(reward_cfg),
      env_base_(env_base),
      rng_(cfg.seed ^ 0x7261696e5f726e67ULL) {
  cfg_.validate();
  reward_cfg_.validate();
  require(!train_set_.empty(), "training set is empty");
}

IterationMetrics Trainer::step() {
  std::vector<const data::Episode*> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
  for (int i = 0; i < cfg_.batch_size; ++i) batch.push_back(&train_set_[rng_.below(train_set_.size())]);
  IterationMetrics m = train_step(iteration_, batch, model_, cfg_, reward_cfg_, env_base_, rng_);
  ++iteration_;
  return m;
}

}  // namespace tsp::train

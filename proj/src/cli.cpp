#include "tsp/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "tsp/config.hpp"
#include "tsp/error.hpp"
#include "tsp/eval.hpp"
#include "tsp/policy.hpp"
#include "tsp/synthdata.hpp"
#include "tsp/trainer.hpp"

namespace tsp::cli {

namespace {

namespace fs = std::filesystem;

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* v = std::getenv("TSP_LOG_LEVEL");
  if (v == nullptr) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet" || s == "error") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  return load_run_config(path);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write to '" + p.string() + "' failed");
}

std::vector<data::Episode> load_data(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("data", "data file '" + path + "' does not exist");
  return data::read_episodes(path);
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string config;
  std::string out;
  std::size_t count = 100;
  std::string split = "train";
};

int gen_data(const GenArgs& a, std::ostream& out) {
  const RunConfig cfg = config_or_default(a.config);
  const data::Generator gen(cfg.gen);
  const std::uint64_t stream = a.split == "train" ? 0 : 1;
  auto eps = gen.generate_many(a.count, a.split + "-", stream);
  ensure_parent(a.out);
  data::write_episodes(a.out, eps);
  out << "wrote " << eps.size() << " episodes to " << a.out << '\n';
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
};

policy::Checkpoint make_checkpoint(const policy::Model& model, const RunConfig& cfg, const train::Trainer& t) {
  policy::Checkpoint c;
  c.encoder_config = model.encoder_config;
  c.env_config = cfg.env;
  c.iteration = t.iteration();
  c.rng_state = t.rng().serialize();
  c.run_config_json = run_config_to_json(cfg).dump();
  c.params = model.params;
  return c;
}

int train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = config_or_default(a.config);
  if (!a.data.empty()) cfg.paths.data = a.data;
  if (!a.out.empty()) cfg.paths.checkpoint = a.out;
  cfg.validate();
  const LogLevel level = log_level();

  auto episodes = load_data(cfg.paths.data);
  if (episodes.empty()) throw ConfigError("paths.data", "data file '" + cfg.paths.data + "' holds no episodes");

  std::optional<policy::Model> model;
  std::uint64_t start = 0;
  std::optional<Rng> resume_rng;
  if (!a.resume.empty()) {
    const policy::Checkpoint ck = policy::load_checkpoint(a.resume);
    model.emplace(policy::model_from_checkpoint(ck, cfg.encoder));
    start = ck.iteration;
    resume_rng.emplace(Rng::deserialize(ck.rng_state));
  } else {
    model.emplace(policy::Model::create(cfg.encoder, cfg.train.seed));
  }

  train::Trainer trainer(*model, std::move(episodes), cfg.train, cfg.reward, cfg.env);
  if (resume_rng) trainer.restore(start, *resume_rng);

  ensure_parent(cfg.paths.metrics);
  std::ofstream metrics(cfg.paths.metrics, std::ios::binary | (a.resume.empty() ? std::ios::trunc : std::ios::app));
  if (!metrics) throw std::runtime_error("cannot open '" + cfg.paths.metrics + "' for writing");
  ensure_parent(cfg.paths.checkpoint);

  while (trainer.iteration() < cfg.train.total_iterations) {
    train::IterationMetrics m;
    try {
      m = trainer.step();
    } catch (const train::TrainingDiverged& e) {
      const std::string dump_path = cfg.paths.metrics + ".diverged.json";
      write_text(dump_path, e.dump().dump(2) + "\n");
      err << "error: " << e.what() << "\n"
          << "trajectory dump written to " << dump_path << '\n';
      return kExitNumericError;
    }
    metrics << m.to_json().dump() << '\n';
    const std::uint64_t done = trainer.iteration();
    if (level == LogLevel::Debug || (level == LogLevel::Info && done % 500 == 0))
      err << "iteration " << done << " psi=" << m.psi << " loss=" << m.loss_total
          << " terminal_iou=" << m.mean_terminal_iou << '\n';
    if (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 &&
        done < cfg.train.total_iterations)
      policy::save_checkpoint(cfg.paths.checkpoint + ".iter" + std::to_string(done),
                              make_checkpoint(*model, cfg, trainer));
  }
  metrics.flush();
  policy::save_checkpoint(cfg.paths.checkpoint, make_checkpoint(*model, cfg, trainer));
  out << "trained " << trainer.iteration() << " iterations; checkpoint " << cfg.paths.checkpoint << '\n';
  return kExitOk;
}

// ---- eval / trace --------------------------------------------------------------

struct LoadedModel {
  RunConfig cfg;
  policy::Model model;
};

// Uses --config when given (dimensions must then match the checkpoint), else
// the configuration echoed into the checkpoint.
LoadedModel load_model(const std::string& config, const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint", "checkpoint '" + checkpoint + "' does not exist");
  const policy::Checkpoint ck = policy::load_checkpoint(checkpoint);
  RunConfig cfg = config.empty() ? parse_run_config(ck.run_config_json) : load_run_config(config);
  policy::Model m = policy::model_from_checkpoint(ck, cfg.encoder);
  return {std::move(cfg), std::move(m)};
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::string report;
  std::string traces;
  std::string csv;
};

int evaluate(const EvalArgs& a, std::ostream& out) {
  LoadedModel lm = load_model(a.config, a.checkpoint);
  const std::string data_path = a.data.empty() ? lm.cfg.paths.eval_data : a.data;
  const std::string report_path = a.report.empty() ? lm.cfg.paths.report : a.report;
  const auto episodes = load_data(data_path);
  require(!episodes.empty(), "evaluation data '" + data_path + "' holds no episodes");

  const int steps = lm.cfg.train.max_steps;
  const auto results = eval::infer_all(lm.model, episodes, lm.cfg.env, steps);
  const auto metrics = eval::compute_metrics(eval::reported_ious(results), lm.cfg.eval.thresholds);
  const auto props = eval::branch_proportions(results, steps);
  const auto report = eval::build_report(results, metrics, props, run_config_to_json(lm.cfg));
  write_text(report_path, report.dump(2) + "\n");
  if (!a.traces.empty()) write_text(a.traces, eval::traces_jsonl(results));
  if (!a.csv.empty()) {
    write_text(a.csv + "_by_step.csv", eval::proportions_csv(props.by_step, "t"));
    write_text(a.csv + "_by_iou.csv", eval::proportions_csv(props.by_iou, "bucket"));
  }
  out << "MIoU " << metrics.miou;
  for (const auto& [eps, v] : metrics.iou_at) out << "  " << eval::threshold_key(eps) << ' ' << v;
  out << "\nreport written to " << report_path << '\n';
  return kExitOk;
}

struct TraceArgs {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::string episode;
};

int trace(const TraceArgs& a, std::ostream& out) {
  LoadedModel lm = load_model(a.config, a.checkpoint);
  const auto episodes = load_data(a.data.empty() ? lm.cfg.paths.eval_data : a.data);
  for (const auto& ep : episodes) {
    if (ep.id != a.episode) continue;
    out << eval::format_trace(eval::infer_episode(lm.model, ep, lm.cfg.env, lm.cfg.train.max_steps));
    return kExitOk;
  }
  throw ConfigError("episode", "no episode with id '" + a.episode + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tree-structured temporal grounding agent"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate synthetic episodes");
  g->add_option("--config", gen.config, "JSON run config")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "episode file to write")->required();
  g->add_option("--count", gen.count, "number of episodes");
  g->add_option("--split", gen.split, "sample stream")->check(CLI::IsMember({"train", "test"}));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an agent");
  t->add_option("--config", tr.config, "JSON run config")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "training episodes (overrides paths.data)");
  t->add_option("--out", tr.out, "checkpoint path (overrides paths.checkpoint)");
  t->add_option("--checkpoint", tr.resume, "resume from this checkpoint");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--config", ev.config, "JSON run config (default: the one stored in the checkpoint)")
      ->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ev.data, "evaluation episodes (overrides paths.eval_data)");
  e->add_option("--report", ev.report, "report path (overrides paths.report)");
  e->add_option("--traces", ev.traces, "write per-step traces as JSON lines");
  e->add_option("--csv", ev.csv, "prefix for branch-proportion CSV files");

  TraceArgs tc;
  auto* c = app.add_subcommand("trace", "print the refinement steps of one episode");
  c->add_option("--config", tc.config, "JSON run config (default: the one stored in the checkpoint)")
      ->check(CLI::ExistingFile);
  c->add_option("--checkpoint", tc.checkpoint, "checkpoint file")->required();
  c->add_option("--data", tc.data, "episode file");
  c->add_option("--episode", tc.episode, "episode id")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return kExitUserError;
  }

  try {
    if (*g) return gen_data(gen, out);
    if (*t) return train(tr, out, err);
    if (*e) return evaluate(ev, out);
    if (*c) return trace(tc, out);
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << '\n';
    return kExitNumericError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUserError;
  }
  return kExitUserError;
}

}  // namespace tsp::cli

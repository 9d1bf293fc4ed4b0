#include "tsp/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "tsp/error.hpp"

namespace tsp {

namespace {

using nlohmann::json;

// Reads keys from one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_env(const json& j, const std::string& path, env::EnvConfig& c) {
  Section s(j, path);
  s.get("num_clips", c.num_clips);
  s.get("marked_step", c.marked_step);
  s.get("adjust_step", c.adjust_step);
  s.get("min_width", c.min_width);
  std::string clamp = c.clamp == env::ClampMode::Rigid ? "rigid" : "independent";
  s.get("clamp", clamp);
  if (clamp == "rigid")
    c.clamp = env::ClampMode::Rigid;
  else if (clamp == "independent")
    c.clamp = env::ClampMode::Independent;
  else
    throw ConfigError(s.field("clamp"), "expected \"rigid\" or \"independent\", got \"" + clamp + "\"");
  s.finish();
}

void read_encoder(const json& j, const std::string& path, enc::EncoderConfig& c) {
  Section s(j, path);
  s.get("unit_dim", c.unit_dim);
  s.get("query_dim", c.query_dim);
  s.get("k_samples", c.k_samples);
  s.get("state_dim", c.state_dim);
  s.get("hidden_dim", c.hidden_dim);
  s.finish();
}

void read_gen(const json& j, const std::string& path, data::GenSpec& c) {
  Section s(j, path);
  s.get("num_clips", c.num_clips);
  s.get("unit_dim", c.unit_dim);
  s.get("query_dim", c.query_dim);
  s.get("latent_dim", c.latent_dim);
  s.get("noise_sigma", c.noise_sigma);
  s.get("min_gt_width", c.min_gt_width);
  s.get("max_gt_width", c.max_gt_width);
  s.get("seed", c.seed);
  s.finish();
}

void read_reward(const json& j, const std::string& path, reward::RewardConfig& c) {
  Section s(j, path);
  s.get("zeta", c.zeta);
  s.get("gamma", c.gamma);
  s.get("iou_gate", c.iou_gate);
  s.get("tie_eps", c.tie_eps);
  std::string boot = c.bootstrap == reward::Bootstrap::FinalState ? "final_state" : "successor";
  s.get("bootstrap", boot);
  if (boot == "final_state")
    c.bootstrap = reward::Bootstrap::FinalState;
  else if (boot == "successor")
    c.bootstrap = reward::Bootstrap::Successor;
  else
    throw ConfigError(s.field("bootstrap"), "expected \"final_state\" or \"successor\", got \"" + boot + "\"");
  s.finish();
}

void read_train(const json& j, const std::string& path, train::TrainConfig& c) {
  Section s(j, path);
  s.get("batch_size", c.batch_size);
  s.get("max_steps", c.max_steps);
  s.get("alternation_period", c.alternation_period);
  s.get("entropy_weight", c.entropy_weight);
  s.get("align_weight", c.align_weight);
  s.get("learning_rate", c.learning_rate);
  s.get("grad_clip", c.grad_clip);
  s.get("total_iterations", c.total_iterations);
  s.get("seed", c.seed);
  s.get("checkpoint_every", c.checkpoint_every);
  s.finish();
}

template <typename F>
void checked(F&& f) {
  try {
    f();
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    const auto sp = msg.find(' ');
    const std::string head = msg.substr(0, sp);
    throw ConfigError(head.find('.') != std::string::npos ? head : "", msg);
  }
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

void RunConfig::validate() const {
  checked([&] {
    gen.validate();
    encoder.validate();
    reward.validate();
    train.validate();
    env.with_clips(gen.num_clips).validate();
  });
  if (encoder.unit_dim != gen.unit_dim)
    throw ConfigError("encoder.unit_dim", "must equal gen.unit_dim (" + std::to_string(encoder.unit_dim) +
                                              " vs " + std::to_string(gen.unit_dim) + ")");
  if (encoder.query_dim != gen.query_dim)
    throw ConfigError("encoder.query_dim", "must equal gen.query_dim (" + std::to_string(encoder.query_dim) +
                                               " vs " + std::to_string(gen.query_dim) + ")");
  if (eval.thresholds.empty()) throw ConfigError("eval.thresholds", "must not be empty");
  for (double t : eval.thresholds)
    if (!(t >= 0.0 && t < 1.0)) throw ConfigError("eval.thresholds", "values must lie in [0, 1)");

  const std::vector<std::pair<std::string, std::string>> outputs = {
      {"paths.checkpoint", paths.checkpoint}, {"paths.metrics", paths.metrics}, {"paths.report", paths.report}};
  const std::vector<std::pair<std::string, std::string>> all = {
      {"paths.data", paths.data},       {"paths.eval_data", paths.eval_data}, {"paths.checkpoint", paths.checkpoint},
      {"paths.metrics", paths.metrics}, {"paths.report", paths.report}};
  for (const auto& [name, p] : outputs) {
    if (p.empty()) throw ConfigError(name, "must not be empty");
    for (const auto& [other, q] : all)
      if (other != name && std::filesystem::path(p).lexically_normal() == std::filesystem::path(q).lexically_normal())
        throw ConfigError(name, "conflicts with " + other + " (" + p + ")");
  }
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "JSON syntax error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  // The global seed fills section seeds that are not given explicitly.
  c.gen.seed = c.seed;
  c.train.seed = c.seed;
  if (const json* s = root.sub("env")) read_env(*s, "env", c.env);
  if (const json* s = root.sub("gen")) read_gen(*s, "gen", c.gen);
  if (const json* s = root.sub("encoder")) read_encoder(*s, "encoder", c.encoder);
  if (const json* s = root.sub("reward")) read_reward(*s, "reward", c.reward);
  if (const json* s = root.sub("train")) read_train(*s, "train", c.train);
  if (const json* s = root.sub("eval")) {
    Section e(*s, "eval");
    e.get("thresholds", c.eval.thresholds);
    e.finish();
  }
  if (const json* s = root.sub("paths")) {
    Section p(*s, "paths");
    p.get("data", c.paths.data);
    p.get("eval_data", c.paths.eval_data);
    p.get("checkpoint", c.paths.checkpoint);
    p.get("metrics", c.paths.metrics);
    p.get("report", c.paths.report);
    p.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  json env_j = c.env;
  env_j.erase("num_clips");
  env_j.erase("marked_step");
  return {{"seed", c.seed},
          {"env", env_j},
          {"gen", c.gen},
          {"encoder", c.encoder},
          {"reward", c.reward},
          {"train", c.train},
          {"eval", {{"thresholds", c.eval.thresholds}}},
          {"paths",
           {{"data", c.paths.data},
            {"eval_data", c.paths.eval_data},
            {"checkpoint", c.paths.checkpoint},
            {"metrics", c.paths.metrics},
            {"report", c.paths.report}}}};
}

}  // namespace tsp

namespace tsp::env {
void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"num_clips", c.num_clips},
       {"marked_step", c.marked_step},
       {"adjust_step", c.adjust_step},
       {"min_width", c.min_width},
       {"clamp", c.clamp == ClampMode::Rigid ? "rigid" : "independent"}};
}
void from_json(const nlohmann::json& j, EnvConfig& c) { read_env(j, "env", c); }
}  // namespace tsp::env

namespace tsp::enc {
void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"unit_dim", c.unit_dim},
       {"query_dim", c.query_dim},
       {"k_samples", c.k_samples},
       {"state_dim", c.state_dim},
       {"hidden_dim", c.hidden_dim}};
}
void from_json(const nlohmann::json& j, EncoderConfig& c) { read_encoder(j, "encoder", c); }
}  // namespace tsp::enc

namespace tsp::data {
void to_json(nlohmann::json& j, const GenSpec& c) {
  j = {{"num_clips", c.num_clips},     {"unit_dim", c.unit_dim},         {"query_dim", c.query_dim},
       {"latent_dim", c.latent_dim},   {"noise_sigma", c.noise_sigma},   {"min_gt_width", c.min_gt_width},
       {"max_gt_width", c.max_gt_width}, {"seed", c.seed}};
}
void from_json(const nlohmann::json& j, GenSpec& c) { read_gen(j, "gen", c); }
}  // namespace tsp::data

namespace tsp::reward {
void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = {{"zeta", c.zeta},
       {"gamma", c.gamma},
       {"iou_gate", c.iou_gate},
       {"tie_eps", c.tie_eps},
       {"bootstrap", c.bootstrap == Bootstrap::FinalState ? "final_state" : "successor"}};
}
void from_json(const nlohmann::json& j, RewardConfig& c) { read_reward(j, "reward", c); }
}  // namespace tsp::reward

namespace tsp::train {
void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"alternation_period", c.alternation_period},
       {"entropy_weight", c.entropy_weight},
       {"align_weight", c.align_weight},
       {"learning_rate", c.learning_rate},
       {"grad_clip", c.grad_clip},
       {"total_iterations", c.total_iterations},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}
void from_json(const nlohmann::json& j, TrainConfig& c) { read_train(j, "train", c); }
}  // namespace tsp::train

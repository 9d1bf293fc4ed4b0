#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsp/encoder.hpp"
#include "tsp/env.hpp"
#include "tsp/reward.hpp"
#include "tsp/synthdata.hpp"
#include "tsp/trainer.hpp"

namespace tsp {

// Malformed or semantically invalid configuration. `field` is the dotted
// path of the offending key when known.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::runtime_error(field.empty() ? msg : field + ": " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct EvalConfig {
  std::vector<double> thresholds = {0.1, 0.3, 0.5, 0.7};
};

struct PathsConfig {
  std::string data = "data/train.tspe";
  std::string eval_data = "data/test.tspe";
  std::string checkpoint = "out/model.tspc";
  std::string metrics = "out/metrics.jsonl";
  std::string report = "out/report.json";
};

struct RunConfig {
  std::uint64_t seed = 0;
  env::EnvConfig env;  // num_clips / marked_step follow each episode
  data::GenSpec gen;
  enc::EncoderConfig encoder;
  reward::RewardConfig reward;
  train::TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  // Nested invariants plus cross-section consistency. Throws ConfigError.
  void validate() const;
};

// Parses a JSON document, merging over defaults. Unknown keys, wrong types and
// invalid values raise ConfigError naming the field (and line for syntax errors).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Effective config with every default filled in.
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace tsp

namespace tsp::env {
void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);
}  // namespace tsp::env

namespace tsp::enc {
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
}  // namespace tsp::enc

namespace tsp::data {
void to_json(nlohmann::json& j, const GenSpec& c);
void from_json(const nlohmann::json& j, GenSpec& c);
}  // namespace tsp::data

namespace tsp::reward {
void to_json(nlohmann::json& j, const RewardConfig& c);
void from_json(const nlohmann::json& j, RewardConfig& c);
}  // namespace tsp::reward

namespace tsp::train {
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
}  // namespace tsp::train

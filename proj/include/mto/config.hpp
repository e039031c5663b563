#pragma once

// Experiment configuration. JSON schema (every key optional, defaults shown
// in README.md):
//
// {
//   "model":        { "routing", "image_size", "patch_size", "width", "heads",
//                     "encoder_layers", "decoder_layers", "mlp_hidden", "init_std" },
//   "masking":      { "ratio", "seed" },
//   "optimization": { "steps", "batch_size", "learning_rate", "warmup_fraction",
//                     "weight_decay", "beta1", "beta2", "seed", "eval_every",
//                     "profile_every", "deterministic", "workers" },
//   "loss":         { "lambda_spa", "lambda_e", "lambda_r", "epsilon",
//                     "enable_spa", "enable_e", "enable_r", "rank_direction",
//                     "scaled_affinity", "guard_floor" },
//   "dataset":      { "format": "synthetic" | "images" | "raw", "path",
//                     "train_count", "holdout_count", "seed" },
//   "output":       { "run_dir", "checkpoint_every", "analysis_images" }
// }

#include "mto/backbone.hpp"
#include "mto/objectives.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace mto {

using json = nlohmann::json;

struct MaskingConfig {
  double ratio = 0.6;
  std::uint64_t seed = 0;
};

struct OptimizationConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double warmup_fraction = 0.05;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::uint64_t seed = 0;
  std::size_t eval_every = 250;
  std::size_t profile_every = 500;
  bool deterministic = true;
  std::size_t workers = 2;  // fast (nondeterministic) mode only
};

struct LossConfig {
  LossWeights weights;
  bool enable_spa = true;
  bool enable_e = true;
  bool enable_r = true;
  RankDirection rank_direction = RankDirection::text_consistent;
  bool scaled_affinity = false;
  // L_r is suspended for a step when any batch-mean H falls below this floor.
  double guard_floor = 1e-3;

  LossWeights effective() const {
    LossWeights w = weights;
    if (!enable_spa) w.lambda_spa = 0;
    if (!enable_e) w.lambda_e = 0;
    if (!enable_r) w.lambda_r = 0;
    return w;
  }
};

struct DatasetConfig {
  std::string format = "synthetic";
  std::string path;
  std::size_t train_count = 2048;
  std::size_t holdout_count = 128;
  std::uint64_t seed = 0;
};

struct OutputConfig {
  std::string run_dir;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t analysis_images = 64;
};

struct ExperimentConfig {
  ModelConfig model;
  MaskingConfig masking;
  OptimizationConfig optimization;
  LossConfig loss;
  DatasetConfig dataset;
  OutputConfig output;

  void validate() const {
    model.validate();
    loss.weights.validate();
    if (!(masking.ratio > 0.0 && masking.ratio < 1.0)) throw ConfigError("masking.ratio must lie in (0, 1)");
    const Index m = masked_count(model.n_patches(), masking.ratio);
    if (m < 1 || m >= model.n_patches()) throw ConfigError("masking.ratio leaves no masked or no visible patch");
    if (optimization.steps == 0 || optimization.batch_size == 0) throw ConfigError("steps and batch_size must be positive");
    if (optimization.eval_every == 0) throw ConfigError("eval_every must be positive");
    if (!(optimization.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (dataset.format != "synthetic" && dataset.format != "images" && dataset.format != "raw")
      throw ConfigError("dataset.format must be synthetic, images or raw");
    if (dataset.format != "synthetic" && !std::filesystem::exists(dataset.path))
      throw ConfigError("dataset.path '" + dataset.path + "' does not exist");
    if (dataset.holdout_count == 0) throw ConfigError("dataset.holdout_count must be positive");
  }
};

inline const char* to_string(RankDirection d) { return d == RankDirection::text_consistent ? "text_consistent" : "verbatim"; }

inline RankDirection rank_direction_from_string(const std::string& s) {
  if (s == "text_consistent") return RankDirection::text_consistent;
  if (s == "verbatim") return RankDirection::verbatim;
  throw ConfigError("unknown rank_direction '" + s + "'");
}

inline json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& o = c.optimization;
  const auto& l = c.loss;
  return json{
      {"model",
       {{"routing", to_string(m.routing)},
        {"image_size", m.image_size},
        {"patch_size", m.patch_size},
        {"width", m.width},
        {"heads", m.heads},
        {"encoder_layers", m.encoder_layers},
        {"decoder_layers", m.decoder_layers},
        {"mlp_hidden", m.mlp_hidden},
        {"init_std", m.init_std}}},
      {"masking", {{"ratio", c.masking.ratio}, {"seed", c.masking.seed}}},
      {"optimization",
       {{"steps", o.steps},
        {"batch_size", o.batch_size},
        {"learning_rate", o.learning_rate},
        {"warmup_fraction", o.warmup_fraction},
        {"weight_decay", o.weight_decay},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"seed", o.seed},
        {"eval_every", o.eval_every},
        {"profile_every", o.profile_every},
        {"deterministic", o.deterministic},
        {"workers", o.workers}}},
      {"loss",
       {{"lambda_spa", l.weights.lambda_spa},
        {"lambda_e", l.weights.lambda_e},
        {"lambda_r", l.weights.lambda_r},
        {"epsilon", l.weights.epsilon},
        {"enable_spa", l.enable_spa},
        {"enable_e", l.enable_e},
        {"enable_r", l.enable_r},
        {"rank_direction", to_string(l.rank_direction)},
        {"scaled_affinity", l.scaled_affinity},
        {"guard_floor", l.guard_floor}}},
      {"dataset",
       {{"format", c.dataset.format},
        {"path", c.dataset.path},
        {"train_count", c.dataset.train_count},
        {"holdout_count", c.dataset.holdout_count},
        {"seed", c.dataset.seed}}},
      {"output",
       {{"run_dir", c.output.run_dir},
        {"checkpoint_every", c.output.checkpoint_every},
        {"analysis_images", c.output.analysis_images}}},
  };
}

namespace detail {

template <typename V>
void read_key(const json& obj, const char* key, V& out) {
  if (obj.contains(key)) out = obj.at(key).get<V>();
}

inline void check_keys(const json& obj, const std::string& block, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config block '" + block + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown config key '" + block + "." + k + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    detail::check_keys(j, "", {"model", "masking", "optimization", "loss", "dataset", "output"});
    if (j.contains("model")) {
      const json& m = j.at("model");
      detail::check_keys(m, "model", {"routing", "image_size", "patch_size", "width", "heads", "encoder_layers", "decoder_layers", "mlp_hidden", "init_std"});
      if (m.contains("routing")) c.model.routing = routing_from_string(m.at("routing").get<std::string>());
      detail::read_key(m, "image_size", c.model.image_size);
      detail::read_key(m, "patch_size", c.model.patch_size);
      detail::read_key(m, "width", c.model.width);
      detail::read_key(m, "heads", c.model.heads);
      detail::read_key(m, "encoder_layers", c.model.encoder_layers);
      detail::read_key(m, "decoder_layers", c.model.decoder_layers);
      detail::read_key(m, "mlp_hidden", c.model.mlp_hidden);
      detail::read_key(m, "init_std", c.model.init_std);
    }
    if (c.model.routing == Routing::decoder_masked) c.masking.ratio = 0.75;
    if (j.contains("masking")) {
      const json& m = j.at("masking");
      detail::check_keys(m, "masking", {"ratio", "seed"});
      detail::read_key(m, "ratio", c.masking.ratio);
      detail::read_key(m, "seed", c.masking.seed);
    }
    if (j.contains("optimization")) {
      const json& o = j.at("optimization");
      detail::check_keys(o, "optimization", {"steps", "batch_size", "learning_rate", "warmup_fraction", "weight_decay", "beta1", "beta2", "seed", "eval_every", "profile_every", "deterministic", "workers"});
      auto& t = c.optimization;
      detail::read_key(o, "steps", t.steps);
      detail::read_key(o, "batch_size", t.batch_size);
      detail::read_key(o, "learning_rate", t.learning_rate);
      detail::read_key(o, "warmup_fraction", t.warmup_fraction);
      detail::read_key(o, "weight_decay", t.weight_decay);
      detail::read_key(o, "beta1", t.beta1);
      detail::read_key(o, "beta2", t.beta2);
      detail::read_key(o, "seed", t.seed);
      detail::read_key(o, "eval_every", t.eval_every);
      detail::read_key(o, "profile_every", t.profile_every);
      detail::read_key(o, "deterministic", t.deterministic);
      detail::read_key(o, "workers", t.workers);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      detail::check_keys(l, "loss", {"lambda_spa", "lambda_e", "lambda_r", "epsilon", "enable_spa", "enable_e", "enable_r", "rank_direction", "scaled_affinity", "guard_floor"});
      auto& t = c.loss;
      detail::read_key(l, "lambda_spa", t.weights.lambda_spa);
      detail::read_key(l, "lambda_e", t.weights.lambda_e);
      detail::read_key(l, "lambda_r", t.weights.lambda_r);
      detail::read_key(l, "epsilon", t.weights.epsilon);
      detail::read_key(l, "enable_spa", t.enable_spa);
      detail::read_key(l, "enable_e", t.enable_e);
      detail::read_key(l, "enable_r", t.enable_r);
      if (l.contains("rank_direction")) t.rank_direction = rank_direction_from_string(l.at("rank_direction").get<std::string>());
      detail::read_key(l, "scaled_affinity", t.scaled_affinity);
      detail::read_key(l, "guard_floor", t.guard_floor);
    }
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      detail::check_keys(d, "dataset", {"format", "path", "train_count", "holdout_count", "seed"});
      detail::read_key(d, "format", c.dataset.format);
      detail::read_key(d, "path", c.dataset.path);
      detail::read_key(d, "train_count", c.dataset.train_count);
      detail::read_key(d, "holdout_count", c.dataset.holdout_count);
      detail::read_key(d, "seed", c.dataset.seed);
    }
    if (j.contains("output")) {
      const json& o = j.at("output");
      detail::check_keys(o, "output", {"run_dir", "checkpoint_every", "analysis_images"});
      detail::read_key(o, "run_dir", c.output.run_dir);
      detail::read_key(o, "checkpoint_every", c.output.checkpoint_every);
      detail::read_key(o, "analysis_images", c.output.analysis_images);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// Directory under which runs without an explicit output.run_dir are placed.
inline std::filesystem::path default_run_root() {
  if (const char* env = std::getenv("MTO_RUN_ROOT"); env && *env) return env;
  return "runs";
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  ExperimentConfig c = config_from_json(j);
  if (!c.dataset.path.empty() && std::filesystem::path(c.dataset.path).is_relative()) {
    const auto rel = std::filesystem::path(path).parent_path() / c.dataset.path;
    if (!std::filesystem::exists(c.dataset.path) && std::filesystem::exists(rel)) c.dataset.path = rel.string();
  }
  c.validate();
  return c;
}

// FNV-1a over the canonical JSON dump; stable across platforms and runs.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j["output"].erase("run_dir");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mto

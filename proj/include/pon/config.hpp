#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pon/checkpoint.hpp"
#include "pon/compare.hpp"

// Layered run configuration: compiled-in defaults, then an optional JSON
// config file, then command-line flag overrides. Unknown keys are rejected by
// name so typos cannot silently fall back to defaults. Every output directory
// receives the fully resolved configuration.

namespace pon {

namespace detail {

inline void reject_unknown_keys(const ordered_json& obj,
                                const std::vector<std::string>& allowed,
                                const std::string& section) {
  require(obj.is_object(), "config section '" + section + "' must be a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const auto& k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw std::invalid_argument("unknown config key '" + section + "." + item.key() + "'");
    }
  }
}

}  // namespace detail

inline void apply_data_json(SyntheticConfig& c, const ordered_json& j) {
  detail::reject_unknown_keys(j,
                              {"num_samples", "num_classes", "feature_dim", "severity_noise",
                               "feature_noise", "thresholds", "seed"},
                              "data");
  if (j.contains("num_samples")) c.num_samples = j.at("num_samples").get<int>();
  if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
  if (j.contains("feature_dim")) c.feature_dim = j.at("feature_dim").get<int>();
  if (j.contains("severity_noise")) c.severity_noise = j.at("severity_noise").get<double>();
  if (j.contains("feature_noise")) c.feature_noise = j.at("feature_noise").get<double>();
  if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

inline void apply_train_json(TrainConfig& c, const ordered_json& j) {
  detail::reject_unknown_keys(
      j,
      {"method", "toggles", "epochs", "batch_size", "temperature", "gamma", "q_neighbors",
       "learning_rate", "softlabel_sigma", "focal_abs_weight", "mcl_log_variant", "seed"},
      "train");
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  if (j.contains("toggles")) {
    const auto& t = j.at("toggles");
    detail::reject_unknown_keys(t, {"poisson_head", "poisson_encoding", "pfl", "mcl"},
                                "train.toggles");
    if (t.contains("poisson_head")) c.toggles.poisson_head = t.at("poisson_head").get<bool>();
    if (t.contains("poisson_encoding")) {
      c.toggles.poisson_encoding = t.at("poisson_encoding").get<bool>();
    }
    if (t.contains("pfl")) c.toggles.pfl = t.at("pfl").get<bool>();
    if (t.contains("mcl")) c.toggles.mcl = t.at("mcl").get<bool>();
  }
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
  if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
  if (j.contains("q_neighbors")) c.q_neighbors = j.at("q_neighbors").get<int>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("softlabel_sigma")) c.softlabel_sigma = j.at("softlabel_sigma").get<double>();
  if (j.contains("focal_abs_weight")) c.focal_abs_weight = j.at("focal_abs_weight").get<bool>();
  if (j.contains("mcl_log_variant")) c.mcl_log_variant = j.at("mcl_log_variant").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

inline void apply_model_json(ModelConfig& c, const ordered_json& j) {
  detail::reject_unknown_keys(j, {"encoder_widths", "proj_hidden", "proj_dim", "num_classes"},
                              "model");
  if (j.contains("encoder_widths")) {
    c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  }
  if (j.contains("proj_hidden")) c.proj_hidden = j.at("proj_hidden").get<int>();
  if (j.contains("proj_dim")) c.proj_dim = j.at("proj_dim").get<int>();
  if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
}

/// Harness-only knobs; the data/train/model sections feed the harness too.
struct CompareKnobs {
  std::vector<Method> methods{Method::kPon, Method::kCe};
  bool methods_explicit = false;
  bool ablation = false;
  int seeds = 5;
  int folds = 5;
  int threads = 0;
};

inline void apply_compare_json(CompareKnobs& c, const ordered_json& j) {
  detail::reject_unknown_keys(j, {"methods", "ablation", "seeds", "folds", "threads"}, "compare");
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
    c.methods_explicit = true;
  }
  if (j.contains("ablation")) c.ablation = j.at("ablation").get<bool>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<int>();
  if (j.contains("folds")) c.folds = j.at("folds").get<int>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
}

struct JobConfig {
  SyntheticConfig data{};
  TrainConfig train{};
  ModelConfig model{};
  CompareKnobs compare{};
};

inline JobConfig job_config_from_json(const ordered_json& j) {
  detail::reject_unknown_keys(j, {"data", "train", "model", "compare"}, "config");
  JobConfig job;
  if (j.contains("data")) apply_data_json(job.data, j.at("data"));
  if (j.contains("train")) apply_train_json(job.train, j.at("train"));
  if (j.contains("model")) apply_model_json(job.model, j.at("model"));
  if (j.contains("compare")) apply_compare_json(job.compare, j.at("compare"));
  return job;
}

inline JobConfig load_job_config(const std::optional<std::string>& path) {
  if (!path) return {};
  return job_config_from_json(read_json_file(*path));
}

inline ordered_json compare_knobs_to_json(const CompareKnobs& c) {
  ordered_json j;
  // Echoing "methods" marks them explicit on reload, so only do that when
  // they were requested; a bare toggle-grid run must round-trip to itself.
  if (c.methods_explicit || !c.ablation) {
    ordered_json methods = ordered_json::array();
    for (Method m : c.methods) methods.push_back(method_to_string(m));
    j["methods"] = methods;
  }
  j["ablation"] = c.ablation;
  j["seeds"] = c.seeds;
  j["folds"] = c.folds;
  j["threads"] = c.threads;
  return j;
}

/// Fully resolved configuration echo, written into every output directory.
inline ordered_json job_config_to_json(const JobConfig& job) {
  ordered_json j;
  j["data"] = synthetic_config_to_json(job.data);
  j["train"] = train_config_to_json(job.train);
  j["model"] = model_config_to_json(job.model);
  j["compare"] = compare_knobs_to_json(job.compare);
  return j;
}

inline CompareConfig make_compare_config(const JobConfig& job) {
  CompareConfig c;
  c.methods = job.compare.methods;
  c.methods_explicit = job.compare.methods_explicit;
  c.ablation = job.compare.ablation;
  c.seeds = job.compare.seeds;
  c.folds = job.compare.folds;
  c.threads = job.compare.threads;
  c.data = job.data;
  c.base = job.train;
  c.model = job.model;
  return c;
}

}  // namespace pon

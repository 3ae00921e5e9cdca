#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pon/data.hpp"
#include "pon/metrics.hpp"
#include "pon/nn.hpp"

// Serialization of training state and evaluation artifacts. Checkpoints are
// JSON; doubles round-trip exactly (shortest-round-trip printing on write,
// correctly rounded parsing on read), so save -> load -> save is
// byte-identical and resumed runs are bit-exact.

namespace pon {

using ordered_json = nlohmann::ordered_json;

inline ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["method"] = method_to_string(c.method);
  j["toggles"] = {{"poisson_head", c.toggles.poisson_head},
                  {"poisson_encoding", c.toggles.poisson_encoding},
                  {"pfl", c.toggles.pfl},
                  {"mcl", c.toggles.mcl}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["temperature"] = c.temperature;
  j["gamma"] = c.gamma;
  j["q_neighbors"] = c.q_neighbors;
  j["learning_rate"] = c.learning_rate;
  j["softlabel_sigma"] = c.softlabel_sigma;
  j["focal_abs_weight"] = c.focal_abs_weight;
  j["mcl_log_variant"] = c.mcl_log_variant;
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.method = method_from_string(j.at("method").get<std::string>());
  const auto& t = j.at("toggles");
  c.toggles.poisson_head = t.at("poisson_head").get<bool>();
  c.toggles.poisson_encoding = t.at("poisson_encoding").get<bool>();
  c.toggles.pfl = t.at("pfl").get<bool>();
  c.toggles.mcl = t.at("mcl").get<bool>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.q_neighbors = j.at("q_neighbors").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.softlabel_sigma = j.at("softlabel_sigma").get<double>();
  c.focal_abs_weight = j.at("focal_abs_weight").get<bool>();
  c.mcl_log_variant = j.at("mcl_log_variant").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline ordered_json synthetic_config_to_json(const SyntheticConfig& c) {
  ordered_json j;
  j["num_samples"] = c.num_samples;
  j["num_classes"] = c.num_classes;
  j["feature_dim"] = c.feature_dim;
  j["severity_noise"] = c.severity_noise;
  j["feature_noise"] = c.feature_noise;
  j["thresholds"] = c.thresholds;
  j["seed"] = c.seed;
  return j;
}

inline SyntheticConfig synthetic_config_from_json(const ordered_json& j) {
  SyntheticConfig c;
  c.num_samples = j.at("num_samples").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.severity_noise = j.at("severity_noise").get<double>();
  c.feature_noise = j.at("feature_noise").get<double>();
  c.thresholds = j.at("thresholds").get<std::vector<double>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["encoder_widths"] = c.encoder_widths;
  j["proj_hidden"] = c.proj_hidden;
  j["proj_dim"] = c.proj_dim;
  j["num_classes"] = c.num_classes;
  return j;
}

inline ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  c.proj_hidden = j.at("proj_hidden").get<int>();
  c.proj_dim = j.at("proj_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  return c;
}

namespace detail {

inline ordered_json affine_to_json(const Affine& a) {
  return ordered_json{{"in", a.in}, {"out", a.out}, {"w", a.w}, {"b", a.b}};
}

inline Affine affine_from_json(const ordered_json& j) {
  Affine a;
  a.in = j.at("in").get<int>();
  a.out = j.at("out").get<int>();
  a.w = j.at("w").get<std::vector<double>>();
  a.b = j.at("b").get<std::vector<double>>();
  require(a.in >= 1 && a.out >= 1, "affine_from_json: bad dimensions");
  require(a.w.size() == static_cast<std::size_t>(a.in) * static_cast<std::size_t>(a.out) &&
              a.b.size() == static_cast<std::size_t>(a.out),
          "affine_from_json: weight shape mismatch");
  return a;
}

inline std::string head_to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kPoisson: return "poisson";
    case HeadKind::kSoftmax: return "softmax";
    case HeadKind::kOrdinal: return "ordinal";
  }
  throw std::logic_error("head_to_string: unknown head");
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "poisson") return HeadKind::kPoisson;
  if (s == "softmax") return HeadKind::kSoftmax;
  if (s == "ordinal") return HeadKind::kOrdinal;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

}  // namespace detail

inline ordered_json model_params_to_json(const ModelParams& p) {
  ordered_json shape;
  shape["input_dim"] = p.shape.input_dim;
  shape["encoder_widths"] = p.shape.encoder_widths;
  shape["num_classes"] = p.shape.num_classes;
  shape["proj_hidden"] = p.shape.proj_hidden;
  shape["proj_dim"] = p.shape.proj_dim;
  shape["head"] = detail::head_to_string(p.shape.head);

  ordered_json enc = ordered_json::array();
  for (const auto& layer : p.encoder) enc.push_back(detail::affine_to_json(layer));

  ordered_json j;
  j["shape"] = shape;
  j["encoder"] = enc;
  j["classifier"] = detail::affine_to_json(p.classifier);
  j["proj_in"] = detail::affine_to_json(p.proj_in);
  j["proj_out"] = detail::affine_to_json(p.proj_out);
  return j;
}

inline ModelParams model_params_from_json(const ordered_json& j) {
  ModelParams p;
  const auto& s = j.at("shape");
  p.shape.input_dim = s.at("input_dim").get<int>();
  p.shape.encoder_widths = s.at("encoder_widths").get<std::vector<int>>();
  p.shape.num_classes = s.at("num_classes").get<int>();
  p.shape.proj_hidden = s.at("proj_hidden").get<int>();
  p.shape.proj_dim = s.at("proj_dim").get<int>();
  p.shape.head = detail::head_from_string(s.at("head").get<std::string>());
  p.shape.validate();
  for (const auto& layer : j.at("encoder")) p.encoder.push_back(detail::affine_from_json(layer));
  p.classifier = detail::affine_from_json(j.at("classifier"));
  p.proj_in = detail::affine_from_json(j.at("proj_in"));
  p.proj_out = detail::affine_from_json(j.at("proj_out"));
  return p;
}

inline ordered_json adam_to_json(const AdamState& a) {
  ordered_json j;
  j["learning_rate"] = a.learning_rate;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["epsilon"] = a.epsilon;
  j["step"] = a.step;
  j["m"] = a.m;
  j["v"] = a.v;
  return j;
}

inline AdamState adam_from_json(const ordered_json& j) {
  AdamState a;
  a.learning_rate = j.at("learning_rate").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.epsilon = j.at("epsilon").get<double>();
  a.step = j.at("step").get<std::int64_t>();
  a.m = j.at("m").get<std::vector<double>>();
  a.v = j.at("v").get<std::vector<double>>();
  detail::require(a.m.size() == a.v.size(), "adam_from_json: moment size mismatch");
  return a;
}

inline ordered_json bank_to_json(const MemoryBank& bank) {
  ordered_json entries = ordered_json::array();
  for (const auto& e : bank.snapshot()) {
    entries.push_back(
        ordered_json{{"id", e.id}, {"label", e.label}, {"projection", e.projection}});
  }
  ordered_json j;
  j["capacity"] = bank.capacity();
  j["proj_dim"] = bank.proj_dim();
  j["entries"] = entries;
  return j;
}

inline MemoryBank bank_from_json(const ordered_json& j) {
  MemoryBank bank(j.at("capacity").get<int>(), j.at("proj_dim").get<int>());
  for (const auto& e : j.at("entries")) {
    bank.update(e.at("id").get<std::int64_t>(),
                Projection::from_unit(e.at("projection").get<std::vector<double>>()),
                ClassLabel(e.at("label").get<int>()));
  }
  return bank;
}

inline constexpr const char* kCheckpointFormat = "pon-checkpoint-v1";

inline ordered_json checkpoint_to_json(const TrainState& state) {
  ordered_json j;
  j["format"] = kCheckpointFormat;
  j["config"] = train_config_to_json(state.config);
  j["model"] = model_params_to_json(state.params);
  j["adam"] = adam_to_json(state.adam);
  j["bank"] = bank_to_json(state.bank);
  Rng copy = state.rng;
  j["rng"] = rng_state_string(copy);
  j["epochs_done"] = state.epochs_done;
  return j;
}

inline TrainState checkpoint_from_json(const ordered_json& j) {
  if (!j.contains("format") || j.at("format").get<std::string>() != kCheckpointFormat) {
    throw std::invalid_argument("checkpoint: unrecognized format marker");
  }
  TrainState s{train_config_from_json(j.at("config")),
               model_params_from_json(j.at("model")),
               adam_from_json(j.at("adam")),
               bank_from_json(j.at("bank")),
               rng_from_state(j.at("rng").get<std::string>()),
               j.at("epochs_done").get<int>()};
  detail::require(s.adam.m.size() == param_count(s.params),
                  "checkpoint: optimizer moments do not match model size");
  return s;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << checkpoint_to_json(state).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Epoch history (JSONL) and evaluation reports

inline ordered_json epoch_record_to_json(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_pfl"] = r.loss_pfl;
  j["loss_mcl"] = r.loss_mcl;
  j["train_acc"] = r.train_acc;
  if (r.val) {
    j["val_acc"] = r.val->acc;
    if (r.val->macro_auc) {
      j["val_macro_auc"] = *r.val->macro_auc;
    } else {
      j["val_macro_auc"] = nullptr;
    }
    j["val_qwk"] = r.val->qwk;
    j["val_macro_f1"] = r.val->macro_f1;
  }
  return j;
}

namespace detail {

inline ordered_json operating_to_json(const std::optional<BinaryOperating>& op) {
  if (!op) return nullptr;
  return ordered_json{{"sen_at_spec80", op->sen_at_spec80},
                      {"spec_at_sen80", op->spec_at_sen80},
                      {"sen_at_spec90", op->sen_at_spec90},
                      {"spec_at_sen90", op->spec_at_sen90}};
}

}  // namespace detail

/// Exactly the metric keys {acc, macro_auc, qwk, macro_f1, primary,
/// secondary}; values that do not apply (no probabilistic output, degenerate
/// binary task) are null.
inline ordered_json eval_report_to_json(const EvalReport& r) {
  ordered_json j;
  j["acc"] = r.acc;
  if (r.macro_auc) {
    j["macro_auc"] = *r.macro_auc;
  } else {
    j["macro_auc"] = nullptr;
  }
  j["qwk"] = r.qwk;
  j["macro_f1"] = r.macro_f1;
  j["primary"] = detail::operating_to_json(r.primary);
  j["secondary"] = detail::operating_to_json(r.secondary);
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const ordered_json& j,
                            int indent = 2) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw std::runtime_error("failed writing: " + path.string());
}

inline ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace pon

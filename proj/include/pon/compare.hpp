#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pon/checkpoint.hpp"
#include "pon/data.hpp"
#include "pon/evaluate.hpp"
#include "pon/nn.hpp"

// Benchmark harness: k-fold cross-validation per method (or per ablation
// toggle row), repeated over data seeds, reporting mean +- sd per metric.
// Runs are independent and internally single-threaded; the worker pool only
// changes wall time, never results.

namespace pon {

struct CompareConfig {
  std::vector<Method> methods{Method::kPon, Method::kCe};
  bool methods_explicit = false;  // methods were requested, not defaulted
  bool ablation = false;          // include the component toggle grid
  int seeds = 5;
  int folds = 5;
  SyntheticConfig data{};
  TrainConfig base{};   // method/toggles/seed are overwritten per run
  ModelConfig model{};
  int threads = 0;  // 0 = PON_THREADS env var, else hardware concurrency

  void validate() const {
    detail::require(seeds >= 1, "CompareConfig: seeds must be >= 1");
    detail::require(folds >= 2, "CompareConfig: folds must be >= 2");
    detail::require(ablation || !methods.empty(), "CompareConfig: empty methods list");
    data.validate();
    base.validate();
  }
};

struct RowSpec {
  std::string label;
  Method method = Method::kPon;
  Toggles toggles{};
};

/// Row definitions: the requested methods, the five-row component toggle
/// grid, or both (explicit methods are prepended when the grid is also
/// requested).
inline std::vector<RowSpec> compare_rows(const CompareConfig& c) {
  std::vector<RowSpec> rows;
  if (!c.ablation || c.methods_explicit) {
    for (Method m : c.methods) rows.push_back({method_to_string(m), m, Toggles{}});
  }
  if (c.ablation) {
    // Component grid: prediction head, label encoding, focal weighting, then
    // the contrastive branch alone and everything combined.
    rows.push_back({"pp", Method::kPon, Toggles{true, false, false, false}});
    rows.push_back({"pp+pe", Method::kPon, Toggles{true, true, false, false}});
    rows.push_back({"pp+pe+pfl", Method::kPon, Toggles{true, true, true, false}});
    rows.push_back({"mcl", Method::kPon, Toggles{false, false, false, true}});
    rows.push_back({"full", Method::kPon, Toggles{true, true, true, true}});
  }
  return rows;
}

struct RunOutcome {
  int row = 0;
  std::uint64_t data_seed = 0;
  int fold = 0;
  bool failed = false;
  std::string error;
  EvalReport report;
  double seconds = 0.0;
};

struct MetricStat {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

inline MetricStat metric_stat(const std::vector<double>& values) {
  MetricStat s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

struct CompareRowResult {
  RowSpec spec;
  int runs = 0;
  int failed = 0;
  MetricStat acc, auc, qwk, f1;
  MetricStat p_sen_spec80, p_spec_sen80, p_sen_spec90, p_spec_sen90;
  MetricStat s_sen_spec80, s_spec_sen80, s_sen_spec90, s_spec_sen90;
};

struct CompareResult {
  std::vector<CompareRowResult> rows;
  std::vector<RunOutcome> outcomes;  // ordered by (row, seed, fold)
  double wall_seconds = 0.0;
  int threads_used = 1;
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PON_THREADS")) {
    try {
      const int n = std::stoi(env);
      detail::require(n >= 1, "positive value required");
      return n;
    } catch (const std::exception&) {
      throw std::invalid_argument("PON_THREADS must be a positive integer, got '" +
                                  std::string(env) + "'");
    }
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace detail {

/// Per-run training seed, decoupled from the data-generation seed so model
/// init never replays the generator's stream.
inline std::uint64_t run_seed(std::uint64_t data_seed, int fold) {
  return data_seed * 1000003ULL + static_cast<std::uint64_t>(fold) + 1ULL;
}

}  // namespace detail

inline CompareResult compare_run(const CompareConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<RowSpec> rows = compare_rows(config);

  // Shared per-seed datasets and folds; read-only once built.
  std::vector<Dataset> datasets;
  std::vector<std::vector<FoldSplit>> splits;
  std::vector<std::uint64_t> data_seeds;
  for (int s = 0; s < config.seeds; ++s) {
    SyntheticConfig dc = config.data;
    dc.seed = config.data.seed + static_cast<std::uint64_t>(s);
    data_seeds.push_back(dc.seed);
    datasets.push_back(generate(dc));
    splits.push_back(kfold_split(datasets.back(), config.folds, dc.seed));
  }

  struct Task {
    int row, seed_index, fold;
  };
  std::vector<Task> tasks;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    for (int s = 0; s < config.seeds; ++s) {
      for (int f = 0; f < config.folds; ++f) tasks.push_back({r, s, f});
    }
  }

  CompareResult result;
  result.outcomes.resize(tasks.size());
  result.threads_used = std::min<int>(resolve_threads(config.threads),
                                      static_cast<int>(tasks.size()));

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= tasks.size()) return;
      const Task& task = tasks[idx];
      RunOutcome& outcome = result.outcomes[idx];
      outcome.row = task.row;
      outcome.data_seed = data_seeds[static_cast<std::size_t>(task.seed_index)];
      outcome.fold = task.fold;
      const auto r0 = std::chrono::steady_clock::now();
      try {
        const Dataset& full = datasets[static_cast<std::size_t>(task.seed_index)];
        const FoldSplit& split =
            splits[static_cast<std::size_t>(task.seed_index)][static_cast<std::size_t>(task.fold)];
        const Dataset train_ds = subset_by_ids(full, split.train_ids);
        const Dataset val_ds = subset_by_ids(full, split.val_ids);

        TrainConfig cfg = config.base;
        cfg.method = rows[static_cast<std::size_t>(task.row)].method;
        cfg.toggles = rows[static_cast<std::size_t>(task.row)].toggles;
        cfg.seed = detail::run_seed(outcome.data_seed, task.fold);
        const TrainResult trained = train(train_ds, nullptr, cfg, config.model);
        outcome.report =
            evaluate(trained.state.params, val_ds, resolve_scheme(trained.state.config));
      } catch (const std::exception& e) {
        outcome.failed = true;
        outcome.error = e.what();
      }
      outcome.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
    }
  };

  if (result.threads_used <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(result.threads_used));
    for (int i = 0; i < result.threads_used; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Aggregate per row.
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    CompareRowResult row;
    row.spec = rows[static_cast<std::size_t>(r)];
    std::vector<double> acc, auc, qwk_v, f1;
    std::vector<double> ps80, pp80, ps90, pp90, ss80, sp80, ss90, sp90;
    for (const auto& o : result.outcomes) {
      if (o.row != r) continue;
      ++row.runs;
      if (o.failed) {
        ++row.failed;
        continue;
      }
      acc.push_back(o.report.acc);
      qwk_v.push_back(o.report.qwk);
      f1.push_back(o.report.macro_f1);
      if (o.report.macro_auc) auc.push_back(*o.report.macro_auc);
      if (o.report.primary) {
        ps80.push_back(o.report.primary->sen_at_spec80);
        pp80.push_back(o.report.primary->spec_at_sen80);
        ps90.push_back(o.report.primary->sen_at_spec90);
        pp90.push_back(o.report.primary->spec_at_sen90);
      }
      if (o.report.secondary) {
        ss80.push_back(o.report.secondary->sen_at_spec80);
        sp80.push_back(o.report.secondary->spec_at_sen80);
        ss90.push_back(o.report.secondary->sen_at_spec90);
        sp90.push_back(o.report.secondary->spec_at_sen90);
      }
    }
    row.acc = metric_stat(acc);
    row.auc = metric_stat(auc);
    row.qwk = metric_stat(qwk_v);
    row.f1 = metric_stat(f1);
    row.p_sen_spec80 = metric_stat(ps80);
    row.p_spec_sen80 = metric_stat(pp80);
    row.p_sen_spec90 = metric_stat(ps90);
    row.p_spec_sen90 = metric_stat(pp90);
    row.s_sen_spec80 = metric_stat(ss80);
    row.s_spec_sen80 = metric_stat(sp80);
    row.s_sen_spec90 = metric_stat(ss90);
    row.s_spec_sen90 = metric_stat(sp90);
    result.rows.push_back(std::move(row));
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

/// "60.06±2.10" with values scaled to percentages; "--" when absent.
inline std::string stat_cell(const MetricStat& s) {
  if (s.n == 0) return "--";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * s.mean << "±" << 100.0 * s.sd;
  return os.str();
}

inline std::size_t display_width(const std::string& cell) {
  // The only multi-byte character emitted is ± (2 bytes, 1 column).
  std::size_t w = 0;
  for (std::size_t i = 0; i < cell.size(); ++i) {
    if ((static_cast<unsigned char>(cell[i]) & 0xc0) != 0x80) ++w;
  }
  return w;
}

}  // namespace detail

/// Fixed-width text table: rows x {acc, auc, qwk, f1}, cells mean±sd as
/// 2-decimal percentages.
inline std::string render_table(const CompareResult& result) {
  const std::vector<std::string> headers{"row", "runs", "acc", "auc", "qwk", "f1"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& row : result.rows) {
    std::ostringstream runs;
    runs << (row.runs - row.failed) << "/" << row.runs;
    if (row.failed > 0) runs << " FAILED";
    cells.push_back({row.spec.label, runs.str(), detail::stat_cell(row.acc),
                     detail::stat_cell(row.auc), detail::stat_cell(row.qwk),
                     detail::stat_cell(row.f1)});
  }
  std::vector<std::size_t> widths;
  for (std::size_t col = 0; col < headers.size(); ++col) {
    std::size_t w = detail::display_width(headers[col]);
    for (const auto& row : cells) w = std::max(w, detail::display_width(row[col]));
    widths.push_back(w);
  }
  std::ostringstream os;
  const auto emit_row = [&](const std::vector<std::string>& row) {
    for (std::size_t col = 0; col < row.size(); ++col) {
      if (col > 0) os << "  ";
      os << row[col]
         << std::string(widths[col] - detail::display_width(row[col]), ' ');
    }
    os << "\n";
  };
  emit_row(headers);
  {
    std::vector<std::string> rule;
    for (std::size_t w : widths) rule.push_back(std::string(w, '-'));
    emit_row(rule);
  }
  for (const auto& row : cells) emit_row(row);
  return os.str();
}

inline ordered_json metric_stat_to_json(const MetricStat& s) {
  if (s.n == 0) return nullptr;
  return ordered_json{{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}};
}

inline ordered_json compare_result_to_json(const CompareConfig& config,
                                           const CompareResult& result) {
  ordered_json j;
  {
    ordered_json cfg;
    if (config.methods_explicit || !config.ablation) {
      ordered_json methods = ordered_json::array();
      for (Method m : config.methods) methods.push_back(method_to_string(m));
      cfg["methods"] = methods;
    }
    cfg["ablation"] = config.ablation;
    cfg["seeds"] = config.seeds;
    cfg["folds"] = config.folds;
    cfg["data"] = synthetic_config_to_json(config.data);
    cfg["train"] = train_config_to_json(config.base);
    cfg["model"] = model_config_to_json(config.model);
    j["config"] = cfg;
  }
  ordered_json rows = ordered_json::array();
  for (const auto& row : result.rows) {
    ordered_json r;
    r["label"] = row.spec.label;
    r["method"] = method_to_string(row.spec.method);
    r["toggles"] = {{"poisson_head", row.spec.toggles.poisson_head},
                    {"poisson_encoding", row.spec.toggles.poisson_encoding},
                    {"pfl", row.spec.toggles.pfl},
                    {"mcl", row.spec.toggles.mcl}};
    r["runs"] = row.runs;
    r["failed"] = row.failed;
    r["acc"] = metric_stat_to_json(row.acc);
    r["macro_auc"] = metric_stat_to_json(row.auc);
    r["qwk"] = metric_stat_to_json(row.qwk);
    r["macro_f1"] = metric_stat_to_json(row.f1);
    r["primary"] = {{"sen_at_spec80", metric_stat_to_json(row.p_sen_spec80)},
                    {"spec_at_sen80", metric_stat_to_json(row.p_spec_sen80)},
                    {"sen_at_spec90", metric_stat_to_json(row.p_sen_spec90)},
                    {"spec_at_sen90", metric_stat_to_json(row.p_spec_sen90)}};
    r["secondary"] = {{"sen_at_spec80", metric_stat_to_json(row.s_sen_spec80)},
                      {"spec_at_sen80", metric_stat_to_json(row.s_spec_sen80)},
                      {"sen_at_spec90", metric_stat_to_json(row.s_sen_spec90)},
                      {"spec_at_sen90", metric_stat_to_json(row.s_spec_sen90)}};
    rows.push_back(std::move(r));
  }
  j["rows"] = rows;
  ordered_json outs = ordered_json::array();
  for (const auto& o : result.outcomes) {
    ordered_json e;
    e["row"] = result.rows[static_cast<std::size_t>(o.row)].spec.label;
    e["data_seed"] = o.data_seed;
    e["fold"] = o.fold;
    e["seconds"] = o.seconds;
    if (o.failed) {
      e["failed"] = true;
      e["error"] = o.error;
    } else {
      e["metrics"] = eval_report_to_json(o.report);
    }
    outs.push_back(std::move(e));
  }
  j["outcomes"] = outs;
  j["wall_seconds"] = result.wall_seconds;
  j["threads"] = result.threads_used;
  return j;
}

}  // namespace pon

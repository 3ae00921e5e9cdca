#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pon/checkpoint.hpp"
#include "pon/compare.hpp"
#include "pon/config.hpp"
#include "pon/data.hpp"
#include "pon/evaluate.hpp"
#include "pon/gradcheck.hpp"
#include "pon/nn.hpp"

// Command-line front end. Exit codes: 0 success, 1 validation error (flags,
// config, input mismatch), 2 runtime error (divergence, failed check, I/O).

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option_function<std::string>(
         "--config", [&flags](const std::string& v) { flags.config_path = v; },
         "JSON config file (flags take precedence)")
      ->check(CLI::ExistingFile);
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&flags](std::uint64_t v) { flags.seed = v; }, "Seed override");
}

void write_resolved_config(const fs::path& out_dir, const pon::JobConfig& job) {
  pon::write_json_file(out_dir / "config.json", pon::job_config_to_json(job));
}

// --------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  CommonFlags common;
  std::string out_path;
  std::optional<int> samples, classes, feature_dim;
  std::optional<double> severity_noise, feature_noise;
};

int run_gen_data(const GenDataArgs& args) {
  pon::JobConfig job = pon::load_job_config(args.common.config_path);
  if (args.common.seed) job.data.seed = *args.common.seed;
  if (args.samples) job.data.num_samples = *args.samples;
  if (args.classes) job.data.num_classes = *args.classes;
  if (args.feature_dim) job.data.feature_dim = *args.feature_dim;
  if (args.severity_noise) job.data.severity_noise = *args.severity_noise;
  if (args.feature_noise) job.data.feature_noise = *args.feature_noise;
  job.data.validate();

  const pon::Dataset ds = pon::generate(job.data);
  const fs::path out(args.out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  pon::save_csv(ds, out.string());
  fs::path provenance = out;
  provenance.replace_extension(".json");
  pon::write_json_file(provenance, pon::synthetic_config_to_json(job.data));
  std::cout << "wrote " << ds.size() << " samples to " << out.string() << " (provenance "
            << provenance.string() << ")\n";
  return 0;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  CommonFlags common;
  std::string data_path;
  std::optional<std::string> val_path;
  std::string out_dir;
  std::optional<std::string> resume_path;
  std::optional<std::string> method;
  std::optional<int> epochs;
  std::optional<int> batch_size;
};

int run_train(const TrainArgs& args) {
  pon::JobConfig job = pon::load_job_config(args.common.config_path);
  if (args.common.seed) job.train.seed = *args.common.seed;
  if (args.method) job.train.method = pon::method_from_string(*args.method);
  if (args.epochs) job.train.epochs = *args.epochs;
  if (args.batch_size) job.train.batch_size = *args.batch_size;

  const fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);

  pon::TrainState state = [&]() {
    if (args.resume_path) {
      pon::TrainState s = pon::load_checkpoint(*args.resume_path);
      if (args.epochs) s.config.epochs = *args.epochs;
      return s;
    }
    const pon::Dataset probe = pon::load_csv(args.data_path, job.model.num_classes);
    return pon::init_train_state(probe, job.train, job.model);
  }();
  const int num_classes = state.params.shape.num_classes;
  const pon::Dataset train_ds = pon::load_csv(args.data_path, num_classes);
  std::optional<pon::Dataset> val_ds;
  if (args.val_path) val_ds = pon::load_csv(*args.val_path, num_classes);

  job.train = state.config;
  job.model.encoder_widths = state.params.shape.encoder_widths;
  job.model.proj_hidden = state.params.shape.proj_hidden;
  job.model.proj_dim = state.params.shape.proj_dim;
  job.model.num_classes = num_classes;
  write_resolved_config(out_dir, job);

  std::ofstream history(out_dir / "history.jsonl", std::ios::app);
  if (!history) throw std::runtime_error("cannot open history.jsonl for writing");
  const auto on_epoch = [&history](const pon::EpochRecord& rec) {
    history << pon::epoch_record_to_json(rec).dump() << "\n";
    history.flush();
    std::cout << "epoch " << rec.epoch << "  loss_pfl " << rec.loss_pfl << "  loss_mcl "
              << rec.loss_mcl << "  train_acc " << rec.train_acc;
    if (rec.val) std::cout << "  val_acc " << rec.val->acc;
    std::cout << "\n";
  };

  pon::run_epochs(state, train_ds, val_ds ? &*val_ds : nullptr, state.config.epochs, on_epoch);
  pon::save_checkpoint(out_dir / "checkpoint.json", state);
  std::cout << "checkpoint written to " << (out_dir / "checkpoint.json").string() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint_path;
  std::string data_path;
  std::optional<std::string> out_dir;
};

int run_eval(const EvalArgs& args) {
  const pon::TrainState state = pon::load_checkpoint(args.checkpoint_path);
  const pon::Dataset ds = pon::load_csv(args.data_path, state.params.shape.num_classes);
  const pon::EvalReport report =
      pon::evaluate(state.params, ds, pon::resolve_scheme(state.config));
  const pon::ordered_json j = pon::eval_report_to_json(report);
  std::cout << j.dump(2) << "\n";
  if (args.out_dir) {
    fs::create_directories(*args.out_dir);
    pon::write_json_file(fs::path(*args.out_dir) / "report.json", j);
  }
  return 0;
}

// --------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  CommonFlags common;
  bool inject_sign_flip = false;
  std::optional<std::string> out_dir;
};

int run_gradcheck_cmd(const GradcheckArgs& args) {
  pon::GradCheckFaults faults;
  faults.flip_rate_grad_sign = args.inject_sign_flip;
  const std::uint64_t seed = args.common.seed.value_or(1);
  const pon::GradCheckReport report = pon::run_gradcheck(seed, faults);

  for (const auto& c : report.cases) {
    const bool ok = c.max_rel_err < report.tolerance;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << c.name << "  checked " << c.checked
              << "  max_rel_err " << c.max_rel_err;
    if (!ok) {
      std::cout << "  worst at " << c.worst << " (analytic " << c.analytic_at_worst
                << ", numeric " << c.numeric_at_worst << ")";
    }
    std::cout << "\n";
  }
  std::cout << (report.passed() ? "gradcheck PASSED" : "gradcheck FAILED") << "  max_rel_err "
            << report.max_rel_err() << "  tolerance " << report.tolerance << "\n";

  if (args.out_dir) {
    fs::create_directories(*args.out_dir);
    pon::ordered_json j;
    j["tolerance"] = report.tolerance;
    j["passed"] = report.passed();
    pon::ordered_json cases = pon::ordered_json::array();
    for (const auto& c : report.cases) {
      cases.push_back(pon::ordered_json{{"name", c.name},
                                        {"checked", c.checked},
                                        {"max_rel_err", c.max_rel_err},
                                        {"worst", c.worst}});
    }
    j["cases"] = cases;
    pon::write_json_file(fs::path(*args.out_dir) / "gradcheck.json", j);
  }
  return report.passed() ? 0 : 2;
}

// --------------------------------------------------------------------------
// compare

struct CompareArgs {
  CommonFlags common;
  std::optional<std::string> methods_csv;
  bool ablation = false;
  std::optional<int> seeds, folds, threads, epochs;
  std::optional<std::string> out_dir;
};

int run_compare(const CompareArgs& args) {
  pon::JobConfig job = pon::load_job_config(args.common.config_path);
  if (args.common.seed) job.data.seed = *args.common.seed;
  if (args.epochs) job.train.epochs = *args.epochs;
  if (args.methods_csv) {
    job.compare.methods.clear();
    job.compare.methods_explicit = true;
    std::stringstream ss(*args.methods_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) job.compare.methods.push_back(pon::method_from_string(tok));
    }
  }
  if (args.ablation) job.compare.ablation = true;
  if (args.seeds) job.compare.seeds = *args.seeds;
  if (args.folds) job.compare.folds = *args.folds;
  if (args.threads) job.compare.threads = *args.threads;

  const pon::CompareConfig config = pon::make_compare_config(job);
  const pon::CompareResult result = pon::compare_run(config);
  std::cout << pon::render_table(result);
  std::cout << "wall " << result.wall_seconds << " s  threads " << result.threads_used << "\n";

  if (args.out_dir) {
    fs::create_directories(*args.out_dir);
    write_resolved_config(*args.out_dir, job);
    pon::write_json_file(fs::path(*args.out_dir) / "compare.json",
                         pon::compare_result_to_json(config, result));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unimodal ordinal classifier: data, training, evaluation, comparison"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic ordinal dataset CSV");
  add_common(gen, gen_args.common);
  gen->add_option("--out", gen_args.out_path, "Output CSV path")->required();
  gen->add_option_function<int>(
      "--samples", [&](int v) { gen_args.samples = v; }, "Number of samples");
  gen->add_option_function<int>(
      "--classes", [&](int v) { gen_args.classes = v; }, "Number of ordinal classes");
  gen->add_option_function<int>(
      "--feature-dim", [&](int v) { gen_args.feature_dim = v; }, "Feature dimension");
  gen->add_option_function<double>(
      "--severity-noise", [&](double v) { gen_args.severity_noise = v; },
      "Latent severity noise sigma");
  gen->add_option_function<double>(
      "--feature-noise", [&](double v) { gen_args.feature_noise = v; },
      "Per-feature noise sigma");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset CSV");
  add_common(train, train_args.common);
  train->add_option("--data", train_args.data_path, "Training CSV")->required();
  train->add_option_function<std::string>(
      "--val", [&](const std::string& v) { train_args.val_path = v; },
      "Validation CSV for per-epoch metrics");
  train->add_option("--out", train_args.out_dir, "Output directory")->required();
  train->add_option_function<std::string>(
      "--resume", [&](const std::string& v) { train_args.resume_path = v; },
      "Resume from a checkpoint");
  train->add_option_function<std::string>(
      "--method", [&](const std::string& v) { train_args.method = v; },
      "pon|ce|focal|emd|ordinal|softlabel");
  train->add_option_function<int>(
      "--epochs", [&](int v) { train_args.epochs = v; }, "Target epoch count");
  train->add_option_function<int>(
      "--batch-size", [&](int v) { train_args.batch_size = v; }, "Batch size");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset CSV");
  eval->add_option("--checkpoint", eval_args.checkpoint_path, "Checkpoint JSON")->required();
  eval->add_option("--data", eval_args.data_path, "Evaluation CSV")->required();
  eval->add_option_function<std::string>(
      "--out", [&](const std::string& v) { eval_args.out_dir = v; },
      "Directory for report.json");

  GradcheckArgs grad_args;
  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  add_common(grad, grad_args.common);
  grad->add_flag("--inject-sign-flip", grad_args.inject_sign_flip,
                 "Test fixture: negate the analytic rate gradient to prove detection");
  grad->add_option_function<std::string>(
      "--out", [&](const std::string& v) { grad_args.out_dir = v; },
      "Directory for gradcheck.json");

  CompareArgs cmp_args;
  CLI::App* cmp = app.add_subcommand("compare", "Cross-validated method comparison");
  add_common(cmp, cmp_args.common);
  cmp->add_option_function<std::string>(
      "--methods", [&](const std::string& v) { cmp_args.methods_csv = v; },
      "Comma-separated method list");
  cmp->add_flag("--ablation", cmp_args.ablation, "Run the toggle-grid ablation rows");
  cmp->add_option_function<int>(
      "--seeds", [&](int v) { cmp_args.seeds = v; }, "Number of data seeds");
  cmp->add_option_function<int>(
      "--folds", [&](int v) { cmp_args.folds = v; }, "Cross-validation folds");
  cmp->add_option_function<int>(
      "--threads", [&](int v) { cmp_args.threads = v; }, "Worker threads (0 = auto)");
  cmp->add_option_function<int>(
      "--epochs", [&](int v) { cmp_args.epochs = v; }, "Epochs per run");
  cmp->add_option_function<std::string>(
      "--out", [&](const std::string& v) { cmp_args.out_dir = v; },
      "Directory for compare.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (grad->parsed()) return run_gradcheck_cmd(grad_args);
    if (cmp->parsed()) return run_compare(cmp_args);
  } catch (const pon::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

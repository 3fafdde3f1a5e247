// Copyright 2026 The StageRefine Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// stagerefine: experiment runner.
//
//   stagerefine prepare  --config run.json [--set key=value ...]
//   stagerefine run      --config run.json [--iterations N] [--resume FILE]
//   stagerefine evaluate --config run.json --checkpoint FILE [--out FILE]
//   stagerefine reproduce-desk-suite [--output DIR] [--seeds 1,2,3,4,5]
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stagerefine/checkpoint.h"
#include "stagerefine/config.h"
#include "stagerefine/desk_suite.h"
#include "stagerefine/errors.h"
#include "stagerefine/eval.h"
#include "stagerefine/pipeline.h"

namespace fs = std::filesystem;
using namespace stagerefine;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "Run config (JSON)");
  cmd->add_option("--set", o.overrides,
                  "Override a config field, e.g. --set train.batch_size=32");
  cmd->add_option("-o,--output", o.output_dir,
                  "Output directory (overrides output_dir)");
  cmd->add_option("--seed", o.seed, "Master seed (overrides master_seed)");
}

// Config from --config, else from <output>/config.json written by prepare,
// else the built-in toy defaults; then flag overrides.
RunConfig resolve_config(const CommonOptions& o, bool allow_archived) {
  RunConfig config;
  if (!o.config_path.empty()) {
    config = load_run_config(o.config_path);
  } else if (allow_archived && !o.output_dir.empty() &&
             fs::exists(fs::path(o.output_dir) / "config.json")) {
    config = load_run_config(fs::path(o.output_dir) / "config.json");
  }
  for (const std::string& assignment : o.overrides) {
    apply_override(config, assignment);
  }
  if (!o.output_dir.empty()) config.output_dir = o.output_dir;
  if (o.seed >= 0) {
    config.pipeline.master_seed = static_cast<std::uint64_t>(o.seed);
  }
  config.validate();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void log_line(const std::string& line) {
  std::cerr << line << std::endl;
}

int cmd_prepare(const CommonOptions& o) {
  const RunConfig config = resolve_config(o, false);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  if (!o.config_path.empty()) {
    write_text(dir / "config.source.json", read_text(o.config_path));
  }
  write_text(dir / "config.json", to_json(config));

  PreparedData data = prepare_data(config);
  write_ledger(data.ledger, dir / "ledger.tsv");
  const NoiseReport report = noise_statistics(data.train, data.ledger);
  std::ofstream out(dir / "noise_report.csv");
  out << "clean_class,count,flip_rate\n";
  for (std::size_t k = 0; k < report.class_counts.size(); ++k) {
    out << k << ',' << report.class_counts[k] << ','
        << report.per_class_flip_rate[k] << '\n';
  }
  std::printf("prepared %s: %zu samples, realized noise rate %.4f -> %s\n",
              data.train.name().c_str(), data.train.size(),
              report.overall_rate, (dir / "ledger.tsv").c_str());
  return 0;
}

class EpochCsv {
 public:
  EpochCsv(const fs::path& path, bool append) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
    if (fresh) out_ << "epoch,phase,mean_loss,learning_rate,sample_count\n";
  }
  void add(int epoch, const std::string& phase, double loss, double lr,
           std::int64_t count) {
    out_ << epoch << ',' << phase << ',' << loss << ',' << lr << ','
         << count << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

int cmd_run(const CommonOptions& o, int iterations,
            const std::string& resume_path) {
  RunConfig config = resolve_config(o, true);
  if (iterations >= 0) config.pipeline.refinery.iterations = iterations;
  const fs::path dir = config.output_dir;
  const fs::path ledger_path = dir / "ledger.tsv";
  if (!fs::exists(ledger_path)) {
    throw IngestionError("no noise ledger at " + ledger_path.string() +
                         "; run 'stagerefine prepare' with the same config "
                         "and output directory first");
  }
  const fs::path data_path = resolve_data_path(config);
  LabeledImageDataset train = load_dataset(data_path, config.dataset.variant,
                                           Split::kTrain, config.dataset.blobs);
  const LabeledImageDataset test = load_dataset(
      data_path, config.dataset.variant, Split::kTest, config.dataset.blobs);
  apply_ledger(train, read_ledger(ledger_path));

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path, &config.pipeline.encoder);
    std::printf("resuming after phase '%s'\n", resume->phase.c_str());
  } else {
    write_text(dir / "config.json", to_json(config));
  }

  EpochCsv epochs(dir / "epochs.csv", resume.has_value());
  EpochCsv pretrain_epochs(dir / "pretrain_epochs.csv", resume.has_value());
  PipelineHooks hooks;
  hooks.on_pretrain_epoch = [&](const PretrainEpoch& e) {
    pretrain_epochs.add(e.epoch, "pretrain", e.mean_loss, e.learning_rate,
                        e.batches);
  };
  hooks.on_epoch = [&](const EpochStats& e) {
    epochs.add(e.epoch, e.phase, e.mean_loss, e.learning_rate,
               e.sample_count);
  };
  hooks.on_phase_complete = [&](const std::string& phase,
                                const ModelState& model,
                                const LabeledImageDataset& dataset,
                                const RefinementState* refinement) {
    const bool labeled = phase != "pretrain";
    save_checkpoint(dir / (phase + ".ckpt"), phase,
                    config.pipeline.master_seed, model,
                    labeled ? &dataset.working_labels() : nullptr,
                    refinement != nullptr && refinement->iteration > 0
                        ? refinement
                        : nullptr);
    if (refinement != nullptr && refinement->iteration > 0) {
      write_iteration_audit(dir / ("audit_" + phase + ".tsv"), dataset,
                            *refinement, refinement->iteration);
    }
    log_line("phase " + phase + " complete");
  };

  const PipelineResult result =
      run_pipeline(config.pipeline, train, &test, hooks, std::move(resume));

  const std::vector<QualityRow> quality =
      label_quality(result.refinement, train);
  emit_quality_csv(quality, dir / "quality.csv");
  MetricsReport report;
  report.dataset = config.dataset.variant;
  report.noise_rate = config.noise.rate;
  report.seed = config.pipeline.master_seed;
  report.test_accuracy = result.final_test_accuracy.value_or(0.0);
  report.quality = quality;
  emit_report(std::span<const MetricsReport>(&report, 1), dir / "metrics.csv");
  std::printf("test accuracy %.2f%%", 100.0 * report.test_accuracy);
  if (result.warmup_test_accuracy) {
    std::printf(" (after warmup %.2f%%)", 100.0 * *result.warmup_test_accuracy);
  }
  std::printf(", working-label accuracy %.2f%% -> %.2f%%\n",
              100.0 * quality.front().working_label_accuracy,
              100.0 * quality.back().working_label_accuracy);
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint_path,
                 const std::string& out_path) {
  const RunConfig config = resolve_config(o, true);
  const Checkpoint ckpt =
      load_checkpoint(checkpoint_path, &config.pipeline.encoder);
  const fs::path data_path = resolve_data_path(config);
  const LabeledImageDataset test = load_dataset(
      data_path, config.dataset.variant, Split::kTest, config.dataset.blobs);

  MetricsReport report;
  report.dataset = config.dataset.variant;
  report.noise_rate = config.noise.rate;
  report.seed = config.pipeline.master_seed;
  report.test_accuracy = accuracy(ckpt.model, test);
  if (ckpt.refinement) {
    PreparedData data = prepare_data(config);
    report.quality = label_quality(*ckpt.refinement, data.train);
  }
  const fs::path out =
      out_path.empty() ? fs::path(config.output_dir) /
                             ("eval_" + ckpt.phase + ".csv")
                       : fs::path(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  emit_report(std::span<const MetricsReport>(&report, 1), out);
  std::printf("%s: test accuracy %.2f%% -> %s\n", ckpt.phase.c_str(),
              100.0 * report.test_accuracy, out.c_str());
  return 0;
}

int cmd_desk_suite(const std::string& output_dir,
                   const std::vector<std::uint64_t>& seeds,
                   bool skip_determinism) {
  DeskSuiteOptions options;
  if (!seeds.empty()) options.seeds = seeds;
  options.check_determinism = !skip_determinism;
  if (!output_dir.empty()) options.output_dir = fs::path(output_dir);
  options.log = log_line;
  const DeskSuiteReport r = run_desk_suite(options);

  bool ok = r.selection_ok() && r.label_gain_ok() && r.test_gain_ok();
  if (r.deterministic) {
    std::printf("[%s] determinism: repeated seed %llu reproduces labels and "
                "test accuracy\n",
                *r.deterministic ? "PASS" : "FAIL",
                static_cast<unsigned long long>(options.seeds.front()));
    ok = ok && *r.deterministic;
  }
  std::printf("[%s] selection: consensus at least as clean as the base set in "
              "%d of %zu seeds\n",
              r.selection_ok() ? "PASS" : "FAIL",
              r.seeds_without_anti_selection, r.seeds.size());
  std::printf("[%s] label accuracy: median gain %+.4f (need +0.05)\n",
              r.label_gain_ok() ? "PASS" : "FAIL",
              r.median_label_accuracy_gain);
  std::printf("[%s] test accuracy: median gain over warmup %+.4f (need "
              "+0.03)\n",
              r.test_gain_ok() ? "PASS" : "FAIL", r.median_test_accuracy_gain);
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stage-scheduled pseudo-label refinement for noisy labels"};
  app.require_subcommand(1);
  app.footer(std::string("Environment: ") + kDataDirEnv +
             " names the dataset cache directory when dataset.path is empty.");

  CommonOptions prepare_opts;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "Load the dataset, inject noise and write the flip ledger");
  add_common(prepare, prepare_opts);

  CommonOptions run_opts;
  int iterations = -1;
  std::string resume_path;
  CLI::App* run = app.add_subcommand(
      "run", "Pretrain, warm up and refine; writes checkpoints and metrics");
  add_common(run, run_opts);
  run->add_option("--iterations", iterations,
                  "Refinement iterations (0 stops after warmup)")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--resume", resume_path,
                  "Continue from a checkpoint such as iter2.ckpt")
      ->check(CLI::ExistingFile);

  CommonOptions eval_opts;
  std::string checkpoint_path;
  std::string eval_out;
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Test accuracy of a checkpoint as a report CSV");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--checkpoint", checkpoint_path, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--out", eval_out, "Report path");

  std::string suite_dir;
  std::vector<std::uint64_t> suite_seeds;
  bool skip_determinism = false;
  CLI::App* suite = app.add_subcommand(
      "reproduce-desk-suite",
      "Toy-scale reproduction over several seeds with pass/fail checks");
  suite->add_option("-o,--output", suite_dir, "Directory for metrics CSVs");
  suite->add_option("--seeds", suite_seeds, "Master seeds")->delimiter(',');
  suite->add_flag("--skip-determinism", skip_determinism,
                  "Do not repeat the first seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_opts);
    if (*run) return cmd_run(run_opts, iterations, resume_path);
    if (*evaluate) return cmd_evaluate(eval_opts, checkpoint_path, eval_out);
    if (*suite) return cmd_desk_suite(suite_dir, suite_seeds, skip_determinism);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return kExitRuntime;
  }
  return kExitUsage;
}

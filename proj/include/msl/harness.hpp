#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msl/evaluate.hpp"
#include "msl/meta.hpp"
#include "msl/tasks.hpp"

namespace msl {

struct ScheduleSettings {
  std::optional<double> decay;  // unset: reach the floor at 80% of training
  std::optional<double> floor;  // unset: 0.03 / N
  bool final_only = false;
};

struct FineTuneSettings {
  int epochs = 10;
  double lr = 0.1;
  int batch_size = 8;
  int train_size = 64;
};

struct EvalSettings {
  int episodes = 2;
  int k = 16;
  DecodeSpec decode{DecodeKind::beam, 5};
  std::optional<int> max_steps;  // unset: longest target plus eos
  bool baseline = false;         // also fine-tune a never-meta-trained model
};

struct StatsSettings {
  int window = 50;
  std::optional<double> threshold;
};

/// Everything one run needs. Every field has a default; see
/// `config_keys()` for the dotted names.
struct ExperimentConfig {
  std::string profile = "desk";
  ModelConfig model = ModelConfig::desk();
  MlpConfig mlp;
  InnerConfig inner;
  OuterConfig outer;
  ScheduleSettings schedule;
  TaskSampler task;
  int source_tasks = 3;   // 0: sample from the whole family
  int heldout_tasks = 2;
  FineTuneSettings finetune;
  EvalSettings eval;
  StatsSettings stats;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  bool record_wall_time = false;

  /// Derives dependent fields (vocabularies, task pool) and validates.
  void finalize();
};

struct ConfigAssignment {
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "command line"
};

/// All recognized keys in documentation order.
const std::vector<std::string>& config_keys();

/// Parses `key = value` lines; '#' starts a comment. Throws ConfigError
/// naming the line for malformed lines.
std::vector<ConfigAssignment> parse_config(std::istream& in, const std::string& source);
std::vector<ConfigAssignment> parse_config_file(const std::filesystem::path& path);

/// Applies assignments in order (a `model.profile` assignment first).
/// Unknown keys and bad values throw ConfigError naming key and origin.
ExperimentConfig make_config(const std::vector<ConfigAssignment>& assignments);

/// Canonical `key = value` dump of the effective configuration.
std::string render_config(const ExperimentConfig& config);

WeightSchedule make_schedule(const ExperimentConfig& config);
LossFn make_loss(const ExperimentConfig& config);
ParamSet initial_params(const ExperimentConfig& config);
EpisodeSource make_training_episodes(const ExperimentConfig& config);

/// Thread count for episode parallelism from MSL_THREADS (default 1).
int thread_count_from_env();

struct AdaptationResult {
  std::int64_t task_id = 0;
  double pre_error = 0.0;
  double post_error = 0.0;
};

/// Fine-tunes on the training split of a held-out task and measures the
/// task error (CER for cipher tasks, MSE otherwise) before and after.
AdaptationResult finetune_and_evaluate(const ParamSet& params, const ExperimentConfig& config,
                                       std::int64_t task_index);

struct ModeSummary {
  MetaMode mode = MetaMode::msl;
  std::vector<CurveStats> stats;           // per seed
  std::vector<double> pre_error;           // per seed, mean over held-out tasks
  std::vector<double> post_error;
  std::vector<std::uint64_t> episode_hash; // per seed
  std::vector<bool> diverged;
};

struct ComparisonReport {
  std::vector<std::uint64_t> seeds;
  std::string metric;  // "cer" or "mse"
  ModeSummary maml;
  ModeSummary msl;
  std::optional<ModeSummary> baseline;  // never meta-trained, errors only
};

/// Runs both modes per seed on identical episode streams, writing metrics
/// and curve files into `config.out_dir`.
ComparisonReport run_comparison(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                 std::ostream& log);

void write_report(std::ostream& out, const ComparisonReport& report, const ExperimentConfig& config);

/// Metrics line for one record.
std::string metrics_line(const RunRecord& record, MetaMode mode, bool with_wall_time);

struct MetricsRow {
  long iter = 0;
  std::string mode;
  double outer_loss = 0.0;
};

/// Reads metrics lines, stopping at the first incomplete line.
std::vector<MetricsRow> read_metrics(std::istream& in);

std::string format_number(double v);

/// Command-line entry point; returns the process exit status
/// (0 success, 2 usage or configuration, 3 numeric divergence).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msl

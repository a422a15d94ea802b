#include "msl/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "msl/checkpoint.hpp"
#include "msl/random.hpp"

namespace msl {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;      // "init"
constexpr std::uint64_t kEpisodeStream = 0x65706973;   // "epis"
constexpr std::uint64_t kTrainStream = 0x74726169;     // "trai"
constexpr std::uint64_t kFineTuneStream = 0x66696e65;  // "fine"
constexpr std::uint64_t kEvalStream = 0x6576616c;      // "eval"

std::string mode_name(MetaMode mode) { return mode == MetaMode::msl ? "msl" : "maml"; }

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::out | mode);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

double task_error(const ParamSet& params, const ExperimentConfig& config, const Task& task, std::uint64_t seed) {
  if (const auto* cipher = std::get_if<CipherLanguageTask>(&task)) {
    return evaluate_model(params, config.model, *cipher, config.eval.episodes, config.eval.decode, seed, config.eval.k,
                          config.eval.max_steps, config.task.feature_dim);
  }
  const Episode test = sample_episode(task, 1, config.eval.k * config.eval.episodes, seed);
  Recording rec;
  ParamVars vars(rec, params, false);
  return make_loss(config)(vars, test.target, {}).item();
}

std::string stats_value(const std::optional<long>& v) { return v ? std::to_string(*v) : "none"; }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string percent_lower(double reference, double value) {
  if (reference == 0.0 || !std::isfinite(reference) || !std::isfinite(value)) return "nan";
  return format_number(100.0 * (reference - value) / reference);
}

void write_curve(const std::filesystem::path& path, const std::vector<std::pair<long, double>>& points) {
  std::ofstream out = open_output(path);
  for (const auto& [iter, loss] : points) out << iter << ' ' << format_number(loss) << '\n';
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

WeightSchedule make_schedule(const ExperimentConfig& config) {
  const int n = config.inner.n_target_losses();
  if (config.schedule.final_only) return WeightSchedule::final_only(n);
  const WeightSchedule base = WeightSchedule::annealed(n, config.outer.n_outer_iters);
  return WeightSchedule(n, config.schedule.decay.value_or(base.decay_per_iter()),
                        config.schedule.floor.value_or(base.floor()));
}

LossFn make_loss(const ExperimentConfig& config) {
  switch (config.task.family) {
    case TaskFamily::cipher:
      return [model = config.model](const ParamVars& p, const Batch& b, const LossContext& ctx) {
        return sequence_nll(p, model, std::get<SequenceBatch>(b), ForwardOptions{ctx.train_mode, ctx.dropout_seed});
      };
    case TaskFamily::sinusoid:
      return [mlp = config.mlp](const ParamVars& p, const Batch& b, const LossContext&) {
        return mlp_loss(p, mlp, std::get<RegressionBatch>(b));
      };
    case TaskFamily::quadratic:
      return [](const ParamVars& p, const Batch& b, const LossContext&) {
        return quadratic_loss(p, std::get<RegressionBatch>(b));
      };
  }
  throw ContractError("make_loss: unknown task family");
}

ParamSet initial_params(const ExperimentConfig& config) {
  const std::uint64_t seed = derive_seed(config.seed, {kInitStream});
  switch (config.task.family) {
    case TaskFamily::cipher:
      return init_params(config.model, seed);
    case TaskFamily::sinusoid:
      return init_mlp(config.mlp, seed);
    case TaskFamily::quadratic:
      return init_quadratic(0.0);
  }
  throw ContractError("initial_params: unknown task family");
}

EpisodeSource make_training_episodes(const ExperimentConfig& config) {
  return make_episode_source(config.task, derive_seed(config.seed, {kEpisodeStream}));
}

int thread_count_from_env() {
  const char* raw = std::getenv("MSL_THREADS");
  if (!raw || !*raw) return 1;
  int n = 0;
  const std::string_view s(raw);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc{} || ptr != s.data() + s.size() || n < 1) {
    throw ConfigError("MSL_THREADS must be a positive integer, got '" + std::string(s) + "'");
  }
  return n;
}

AdaptationResult finetune_and_evaluate(const ParamSet& params, const ExperimentConfig& config,
                                       std::int64_t task_index) {
  const auto j = static_cast<std::uint64_t>(task_index);
  const Task task = sample_task(config.task, heldout_task_index(task_index));
  const std::uint64_t eval_seed = derive_seed(config.seed, {kEvalStream, j});

  AdaptationResult result;
  result.task_id = task_index;
  result.pre_error = task_error(params, config, task, eval_seed);
  if (config.finetune.epochs == 0) {
    result.post_error = result.pre_error;
    return result;
  }
  const std::uint64_t ft_seed = derive_seed(config.seed, {kFineTuneStream, j});
  const Episode train = sample_episode(task, config.finetune.train_size, 1, ft_seed, heldout_task_index(task_index),
                                       config.task.feature_dim);
  const FineTuneConfig ft{config.finetune.epochs, config.finetune.lr, config.finetune.batch_size,
                          derive_seed(ft_seed, {1})};
  const ParamSet tuned = fine_tune(params, train.support, ft, make_loss(config));
  result.post_error = task_error(tuned, config, task, eval_seed);
  return result;
}

std::string metrics_line(const RunRecord& record, MetaMode mode, bool with_wall_time) {
  nlohmann::ordered_json j;
  j["iter"] = record.outer_iter;
  j["mode"] = mode_name(mode);
  j["outer_loss"] = record.outer_loss;
  j["step_losses"] = record.per_step_losses;
  j["weights"] = record.weights;
  j["wall_ms"] = with_wall_time ? record.wall_ms : 0.0;
  return j.dump();
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) break;
    const auto iter = j.find("iter");
    const auto mode = j.find("mode");
    const auto loss = j.find("outer_loss");
    if (iter == j.end() || mode == j.end() || loss == j.end() || !iter->is_number_integer() || !mode->is_string() ||
        !loss->is_number()) {
      break;
    }
    rows.push_back({iter->get<long>(), mode->get<std::string>(), loss->get<double>()});
  }
  return rows;
}

ComparisonReport run_comparison(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                std::ostream& log) {
  if (seeds.empty()) throw ConfigError("compare: at least one seed is required");
  ComparisonReport report;
  report.seeds = seeds;
  report.metric = config.task.family == TaskFamily::cipher ? "cer" : "mse";
  report.maml.mode = MetaMode::maml;
  report.msl.mode = MetaMode::msl;
  if (config.eval.baseline) report.baseline = ModeSummary{};
  const int threads = thread_count_from_env();

  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = config;
    cfg.seed = seed;
    cfg.finalize();
    const ParamSet theta0 = initial_params(cfg);
    const LossFn loss = make_loss(cfg);

    auto evaluate = [&](const ParamSet& params, ModeSummary& summary) {
      std::vector<double> pre, post;
      for (int j = 0; j < cfg.heldout_tasks; ++j) {
        const AdaptationResult r = finetune_and_evaluate(params, cfg, j);
        pre.push_back(r.pre_error);
        post.push_back(r.post_error);
      }
      summary.pre_error.push_back(mean_of(pre));
      summary.post_error.push_back(mean_of(post));
    };

    for (MetaMode mode : {MetaMode::maml, MetaMode::msl}) {
      cfg.outer.mode = mode;
      ModeSummary& summary = mode == MetaMode::maml ? report.maml : report.msl;
      const std::string tag = mode_name(mode) + "_seed" + std::to_string(seed);
      std::ofstream metrics = open_output(cfg.out_dir / ("metrics_" + tag + ".jsonl"));
      const TrainResult run = meta_train(
          theta0, make_training_episodes(cfg), cfg.inner, cfg.outer, make_schedule(cfg),
          derive_seed(seed, {kTrainStream}), loss,
          [&](const RunRecord& r) { metrics << metrics_line(r, mode, cfg.record_wall_time) << '\n' << std::flush; },
          threads);

      std::vector<std::pair<long, double>> curve;
      for (const RunRecord& r : run.records) curve.emplace_back(r.outer_iter, r.outer_loss);
      write_curve(cfg.out_dir / ("curve_" + tag + ".dat"), curve);

      summary.stats.push_back(run.records.size() >= 2
                                  ? curve_stats(std::span<const RunRecord>(run.records), cfg.stats.window,
                                                cfg.stats.threshold)
                                  : CurveStats{});
      summary.episode_hash.push_back(run.episode_hash);
      summary.diverged.push_back(run.divergence.has_value());
      if (run.divergence) {
        log << tag << ": diverged: " << run.divergence->what() << '\n';
        summary.pre_error.push_back(std::nan(""));
        summary.post_error.push_back(std::nan(""));
      } else {
        evaluate(run.params, summary);
      }
      log << tag << ": " << run.records.size() << " iterations, post " << report.metric << ' '
          << format_number(summary.post_error.back()) << '\n';
    }
    if (report.maml.episode_hash.back() != report.msl.episode_hash.back()) {
      throw ContractError("compare: episode streams differ between modes for seed " + std::to_string(seed));
    }
    if (report.baseline) {
      evaluate(theta0, *report.baseline);
      report.baseline->diverged.push_back(false);
    }
  }
  return report;
}

void write_report(std::ostream& out, const ComparisonReport& report, const ExperimentConfig& config) {
  out << "seeds =";
  for (auto s : report.seeds) out << ' ' << s;
  out << "\nmetric = " << report.metric << '\n';
  out << "window = " << config.stats.window << '\n';
  out << "threshold = " << (config.stats.threshold ? format_number(*config.stats.threshold) : "none") << '\n';

  const ModeSummary* modes[] = {&report.maml, &report.msl};
  for (const ModeSummary* m : modes) {
    for (std::size_t i = 0; i < report.seeds.size(); ++i) {
      const CurveStats& s = m->stats[i];
      char hash[19];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m->episode_hash[i]));
      out << "\n[" << mode_name(m->mode) << " seed=" << report.seeds[i] << "]\n";
      out << "episode_hash = " << hash << '\n';
      out << "diverged = " << (m->diverged[i] ? "true" : "false") << '\n';
      out << "mean_abs_successive_diff = " << format_number(s.mean_abs_successive_diff) << '\n';
      out << "windowed_std = " << format_number(s.windowed_std) << '\n';
      out << "max_spike = " << format_number(s.max_spike) << '\n';
      out << "auc = " << format_number(s.auc) << '\n';
      out << "iters_to_threshold = " << stats_value(s.iters_to_threshold) << '\n';
      out << "pre_" << report.metric << " = " << format_number(m->pre_error[i]) << '\n';
      out << "post_" << report.metric << " = " << format_number(m->post_error[i]) << '\n';
    }
  }
  if (report.baseline) {
    for (std::size_t i = 0; i < report.seeds.size(); ++i) {
      out << "\n[baseline seed=" << report.seeds[i] << "]\n";
      out << "pre_" << report.metric << " = " << format_number(report.baseline->pre_error[i]) << '\n';
      out << "post_" << report.metric << " = " << format_number(report.baseline->post_error[i]) << '\n';
    }
  }

  auto field_mean = [](const ModeSummary& m, auto get) {
    std::vector<double> v;
    for (const CurveStats& s : m.stats) v.push_back(get(s));
    return mean_of(v);
  };
  out << "\n[improvement msl over maml]\n";
  out << "mean_abs_successive_diff_pct = "
      << percent_lower(field_mean(report.maml, [](const CurveStats& s) { return s.mean_abs_successive_diff; }),
                       field_mean(report.msl, [](const CurveStats& s) { return s.mean_abs_successive_diff; }))
      << '\n';
  out << "windowed_std_pct = "
      << percent_lower(field_mean(report.maml, [](const CurveStats& s) { return s.windowed_std; }),
                       field_mean(report.msl, [](const CurveStats& s) { return s.windowed_std; }))
      << '\n';
  out << "max_spike_pct = "
      << percent_lower(field_mean(report.maml, [](const CurveStats& s) { return s.max_spike; }),
                       field_mean(report.msl, [](const CurveStats& s) { return s.max_spike; }))
      << '\n';
  out << "auc_pct = "
      << percent_lower(field_mean(report.maml, [](const CurveStats& s) { return s.auc; }),
                       field_mean(report.msl, [](const CurveStats& s) { return s.auc; }))
      << '\n';
  out << "post_" << report.metric << "_pct = "
      << percent_lower(mean_of(report.maml.post_error), mean_of(report.msl.post_error)) << '\n';
}

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "Master seed");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->allow_extras();
}

/// Turns leftover `--key value` / `--key=value` arguments into assignments.
std::vector<ConfigAssignment> overrides_from(const std::vector<std::string>& extras) {
  std::vector<ConfigAssignment> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw ConfigError("unexpected argument '" + a + "'");
    std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.push_back({body.substr(0, eq), body.substr(eq + 1), "command line"});
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for '" + a + "'");
      out.push_back({body, extras[++i], "command line"});
    }
  }
  return out;
}

ExperimentConfig load_config(const CommonOptions& opts, const std::vector<std::string>& extras) {
  std::vector<ConfigAssignment> all;
  if (!opts.config_path.empty()) all = parse_config_file(opts.config_path);
  for (auto& a : overrides_from(extras)) all.push_back(std::move(a));
  if (opts.seed) all.push_back({"seed", std::to_string(*opts.seed), "--seed"});
  if (opts.out_dir) all.push_back({"output.dir", *opts.out_dir, "--out"});
  return make_config(all);
}

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(config.out_dir / "config.txt", std::ios::binary) << render_config(config);
  std::ofstream metrics = open_output(config.out_dir / "metrics.jsonl");
  const TrainResult run = meta_train(
      initial_params(config), make_training_episodes(config), config.inner, config.outer, make_schedule(config),
      derive_seed(config.seed, {kTrainStream}), make_loss(config),
      [&](const RunRecord& r) {
        metrics << metrics_line(r, config.outer.mode, config.record_wall_time) << '\n' << std::flush;
      },
      thread_count_from_env());
  if (run.divergence) throw *run.divergence;
  write_checkpoint(config.out_dir / "checkpoint.bin", run.params);
  out << "trained " << run.records.size() << " iterations; checkpoint " << (config.out_dir / "checkpoint.bin").string()
      << '\n';
  return 0;
}

int cmd_finetune_eval(const ExperimentConfig& config, const std::string& checkpoint, std::int64_t task,
                      std::ostream& out) {
  const ParamSet params = read_checkpoint(checkpoint);
  try {
    check_same_structure(initial_params(config), params);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint does not match the configured model: ") + e.what());
  }
  const AdaptationResult r = finetune_and_evaluate(params, config, task);
  std::ofstream results = open_output(config.out_dir / "results.tsv", std::ios::app);
  results << r.task_id << '\t' << format_number(r.pre_error) << '\t' << format_number(r.post_error) << '\n';
  out << "task " << r.task_id << ": pre " << format_number(r.pre_error) << ", post " << format_number(r.post_error)
      << '\n';
  return 0;
}

int cmd_compare(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds, std::ostream& out) {
  std::filesystem::create_directories(config.out_dir);
  std::ofstream(config.out_dir / "config.txt", std::ios::binary) << render_config(config);
  const ComparisonReport report = run_comparison(config, seeds, out);
  std::ofstream file = open_output(config.out_dir / "report.txt");
  write_report(file, report, config);
  out << "report " << (config.out_dir / "report.txt").string() << '\n';
  bool diverged = false;
  for (bool d : report.maml.diverged) diverged |= d;
  for (bool d : report.msl.diverged) diverged |= d;
  return diverged ? 3 : 0;
}

int cmd_emit_plot_data(const std::filesystem::path& metrics_path, const std::optional<std::string>& out_dir,
                       std::ostream& out) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw FormatError("cannot read metrics file " + metrics_path.string());
  const std::vector<MetricsRow> rows = read_metrics(in);
  if (rows.empty()) throw FormatError("no metrics records in " + metrics_path.string());
  std::map<std::string, std::vector<std::pair<long, double>>> curves;
  for (const MetricsRow& r : rows) curves[r.mode].emplace_back(r.iter, r.outer_loss);
  const std::filesystem::path dir = out_dir ? std::filesystem::path(*out_dir) : metrics_path.parent_path();
  for (const auto& [mode, points] : curves) {
    const auto path = dir / (metrics_path.stem().string() + "." + mode + ".dat");
    write_curve(path, points);
    out << path.string() << ": " << points.size() << " rows\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-learning experiment runner"};
  app.require_subcommand(1);

  CommonOptions train_opts, ft_opts, cmp_opts;
  auto* train = app.add_subcommand("train", "Meta-train and write a checkpoint plus metrics");
  add_common(train, train_opts);

  auto* ft = app.add_subcommand("finetune-eval", "Fine-tune a checkpoint on a held-out task and evaluate it");
  add_common(ft, ft_opts);
  std::string checkpoint;
  std::int64_t task = 0;
  std::optional<int> epochs;
  std::optional<std::string> decode;
  std::optional<int> beam;
  ft->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ft->add_option("--task", task, "Held-out task number")->check(CLI::NonNegativeNumber);
  ft->add_option("--epochs", epochs, "Fine-tuning epochs");
  ft->add_option("--decode", decode, "greedy or beam");
  ft->add_option("--beam-size", beam, "Beam width");

  auto* cmp = app.add_subcommand("compare", "Run maml and msl on identical episode streams");
  add_common(cmp, cmp_opts);
  std::vector<std::uint64_t> seeds;
  cmp->add_option("--seeds", seeds, "Seeds, comma separated")->delimiter(',');

  auto* plot = app.add_subcommand("emit-plot-data", "Write two-column curve files from a metrics file");
  std::string metrics_file;
  std::optional<std::string> plot_out;
  plot->add_option("metrics", metrics_file, "Metrics file")->required();
  plot->add_option("--out", plot_out, "Output directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return cmd_train(load_config(train_opts, train->remaining()), out);
    if (*ft) {
      std::vector<std::string> extras = ft->remaining();
      if (epochs) extras.insert(extras.end(), {"--finetune.epochs", std::to_string(*epochs)});
      if (decode) extras.insert(extras.end(), {"--eval.decode", *decode});
      if (beam) extras.insert(extras.end(), {"--eval.beam-size", std::to_string(*beam)});
      return cmd_finetune_eval(load_config(ft_opts, extras), checkpoint, task, out);
    }
    if (*cmp) {
      const ExperimentConfig config = load_config(cmp_opts, cmp->remaining());
      if (seeds.empty()) seeds.push_back(config.seed);
      return cmd_compare(config, seeds, out);
    }
    if (*plot) return cmd_emit_plot_data(metrics_file, plot_out, out);
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace msl

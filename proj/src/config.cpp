#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "msl/harness.hpp"

namespace msl {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

struct KeyError {
  std::string message;
};

long long parse_int(const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw KeyError{"expected an integer, got '" + v + "'"};
  return out;
}

int parse_int32(const std::string& v) {
  const long long x = parse_int(v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw KeyError{"integer out of range: '" + v + "'"};
  }
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw KeyError{"expected an unsigned integer, got '" + v + "'"};
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw KeyError{"expected a number, got '" + v + "'"};
  return out;
}

std::optional<double> parse_optional_double(const std::string& v) {
  if (v == "auto" || v == "none") return std::nullopt;
  return parse_double(v);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw KeyError{"expected true or false, got '" + v + "'"};
}

std::string opt_text(const std::optional<double>& v) { return v ? format_number(*v) : "auto"; }

struct KeySpec {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define MSL_INT_KEY(name, field)                                                        \
  KeySpec {                                                                             \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_int32(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }               \
  }
#define MSL_DOUBLE_KEY(name, field)                                                      \
  KeySpec {                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(v); }, \
        [](const ExperimentConfig& c) { return format_number(c.field); }                 \
  }
#define MSL_BOOL_KEY(name, field)                                                      \
  KeySpec {                                                                            \
    name, [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(v); }, \
        [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); } \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      KeySpec{"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64(v); },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      KeySpec{"output.dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
              [](const ExperimentConfig& c) { return c.out_dir.string(); }},
      MSL_BOOL_KEY("output.wall-time", record_wall_time),

      KeySpec{"task.family",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "cipher") c.task.family = TaskFamily::cipher;
                else if (v == "sinusoid") c.task.family = TaskFamily::sinusoid;
                else if (v == "quadratic") c.task.family = TaskFamily::quadratic;
                else throw KeyError{"expected cipher, sinusoid or quadratic, got '" + v + "'"};
              },
              [](const ExperimentConfig& c) {
                switch (c.task.family) {
                  case TaskFamily::cipher: return std::string("cipher");
                  case TaskFamily::sinusoid: return std::string("sinusoid");
                  case TaskFamily::quadratic: return std::string("quadratic");
                }
                return std::string();
              }},
      MSL_INT_KEY("task.alphabet", task.alphabet),
      MSL_INT_KEY("task.min-len", task.min_len),
      MSL_INT_KEY("task.max-len", task.max_len),
      MSL_DOUBLE_KEY("task.noise", task.noise),
      MSL_INT_KEY("task.k-support", task.k_support),
      MSL_INT_KEY("task.k-target", task.k_target),
      MSL_INT_KEY("task.source-tasks", source_tasks),
      MSL_INT_KEY("task.heldout-tasks", heldout_tasks),

      KeySpec{"model.profile",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "desk") c.model = ModelConfig::desk();
                else if (v == "full") c.model = ModelConfig::full();
                else throw KeyError{"expected desk or full, got '" + v + "'"};
                c.profile = v;
              },
              [](const ExperimentConfig& c) { return c.profile; }},
      MSL_INT_KEY("model.d-model", model.d_model),
      MSL_INT_KEY("model.n-heads", model.n_heads),
      MSL_INT_KEY("model.d-k", model.d_k),
      MSL_INT_KEY("model.d-v", model.d_v),
      MSL_INT_KEY("model.d-ff", model.d_ff),
      MSL_INT_KEY("model.encoder-layers", model.n_encoder_layers),
      MSL_INT_KEY("model.decoder-layers", model.n_decoder_layers),
      MSL_DOUBLE_KEY("model.dropout", model.dropout),
      MSL_INT_KEY("model.max-len", model.max_len),
      KeySpec{"model.conv-layers",
              [](ExperimentConfig& c, const std::string& v) {
                const int n = parse_int32(v);
                if (n < 0) throw KeyError{"must be non-negative"};
                if (n == 0) {
                  c.model.conv.reset();
                } else {
                  if (!c.model.conv) c.model.conv = ConvSpec{};
                  c.model.conv->n_layers = n;
                }
              },
              [](const ExperimentConfig& c) { return std::to_string(c.model.conv ? c.model.conv->n_layers : 0); }},
      KeySpec{"model.conv-channels",
              [](ExperimentConfig& c, const std::string& v) {
                if (!c.model.conv) c.model.conv = ConvSpec{0, 4, 8};
                c.model.conv->channels = parse_int32(v);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.model.conv ? c.model.conv->channels : ConvSpec{}.channels); }},
      KeySpec{"model.feature-dim",
              [](ExperimentConfig& c, const std::string& v) {
                if (!c.model.conv) c.model.conv = ConvSpec{0, 4, 8};
                c.model.conv->feature_dim = parse_int32(v);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.model.conv ? c.model.conv->feature_dim : ConvSpec{}.feature_dim); }},

      MSL_INT_KEY("mlp.hidden", mlp.hidden),
      MSL_INT_KEY("mlp.layers", mlp.n_hidden_layers),

      MSL_INT_KEY("inner.n-steps", inner.n_steps),
      MSL_DOUBLE_KEY("inner.alpha", inner.alpha),
      MSL_BOOL_KEY("inner.include-step-zero", inner.include_step_zero),

      KeySpec{"outer.mode",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "msl") c.outer.mode = MetaMode::msl;
                else if (v == "maml") c.outer.mode = MetaMode::maml;
                else throw KeyError{"expected msl or maml, got '" + v + "'"};
              },
              [](const ExperimentConfig& c) { return std::string(c.outer.mode == MetaMode::msl ? "msl" : "maml"); }},
      MSL_DOUBLE_KEY("outer.meta-lr", outer.meta_lr),
      MSL_INT_KEY("outer.meta-batch-size", outer.meta_batch_size),
      KeySpec{"outer.n-outer-iters", [](ExperimentConfig& c, const std::string& v) { c.outer.n_outer_iters = parse_int(v); },
              [](const ExperimentConfig& c) { return std::to_string(c.outer.n_outer_iters); }},
      KeySpec{"outer.optimizer",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "adam") c.outer.optimizer = OptimizerKind::adam;
                else if (v == "sgd") c.outer.optimizer = OptimizerKind::sgd;
                else throw KeyError{"expected adam or sgd, got '" + v + "'"};
              },
              [](const ExperimentConfig& c) {
                return std::string(c.outer.optimizer == OptimizerKind::adam ? "adam" : "sgd");
              }},
      MSL_DOUBLE_KEY("outer.beta1", outer.beta1),
      MSL_DOUBLE_KEY("outer.beta2", outer.beta2),
      MSL_DOUBLE_KEY("outer.epsilon", outer.epsilon),

      KeySpec{"schedule.decay",
              [](ExperimentConfig& c, const std::string& v) { c.schedule.decay = parse_optional_double(v); },
              [](const ExperimentConfig& c) { return opt_text(c.schedule.decay); }},
      KeySpec{"schedule.floor",
              [](ExperimentConfig& c, const std::string& v) { c.schedule.floor = parse_optional_double(v); },
              [](const ExperimentConfig& c) { return opt_text(c.schedule.floor); }},
      MSL_BOOL_KEY("schedule.final-only", schedule.final_only),

      MSL_INT_KEY("finetune.epochs", finetune.epochs),
      MSL_DOUBLE_KEY("finetune.lr", finetune.lr),
      MSL_INT_KEY("finetune.batch-size", finetune.batch_size),
      MSL_INT_KEY("finetune.train-size", finetune.train_size),

      MSL_INT_KEY("eval.episodes", eval.episodes),
      MSL_INT_KEY("eval.k", eval.k),
      KeySpec{"eval.decode",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "greedy") c.eval.decode.kind = DecodeKind::greedy;
                else if (v == "beam") c.eval.decode.kind = DecodeKind::beam;
                else throw KeyError{"expected greedy or beam, got '" + v + "'"};
              },
              [](const ExperimentConfig& c) {
                return std::string(c.eval.decode.kind == DecodeKind::beam ? "beam" : "greedy");
              }},
      MSL_INT_KEY("eval.beam-size", eval.decode.beam_size),
      KeySpec{"eval.max-steps",
              [](ExperimentConfig& c, const std::string& v) {
                if (v == "auto") c.eval.max_steps.reset();
                else c.eval.max_steps = parse_int32(v);
              },
              [](const ExperimentConfig& c) {
                return c.eval.max_steps ? std::to_string(*c.eval.max_steps) : std::string("auto");
              }},
      MSL_BOOL_KEY("eval.baseline", eval.baseline),

      MSL_INT_KEY("stats.window", stats.window),
      KeySpec{"stats.threshold",
              [](ExperimentConfig& c, const std::string& v) { c.stats.threshold = parse_optional_double(v); },
              [](const ExperimentConfig& c) { return c.stats.threshold ? format_number(*c.stats.threshold) : "none"; }},
  };
  return specs;
}

#undef MSL_INT_KEY
#undef MSL_DOUBLE_KEY
#undef MSL_BOOL_KEY

const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& k : key_specs())
    if (k.key == key) return &k;
  return nullptr;
}

}  // namespace

void ExperimentConfig::finalize() {
  if (task.family == TaskFamily::cipher) {
    model.src_vocab = TokenLayout::vocab_for_alphabet(task.alphabet);
    model.tgt_vocab = TokenLayout::vocab_for_alphabet(task.alphabet);
    if (task.max_len + 1 > model.max_len) {
      throw ConfigError("task.max-len plus eos exceeds model.max-len");
    }
    if (model.conv) {
      if (model.conv->n_layers == 0) model.conv.reset();
    }
    task.feature_dim = model.conv ? model.conv->feature_dim : 0;
    model.validate();
  } else {
    mlp.validate();
  }
  task.master_seed = seed;
  task.task_pool.clear();
  if (source_tasks < 0) throw ConfigError("task.source-tasks must be non-negative");
  for (int i = 0; i < source_tasks; ++i) task.task_pool.push_back(i);
  if (heldout_tasks < 0) throw ConfigError("task.heldout-tasks must be non-negative");
  task.validate();
  inner.validate();
  outer.validate();
  if (finetune.epochs < 0) throw ConfigError("finetune.epochs must be non-negative");
  if (!(finetune.lr >= 0.0)) throw ConfigError("finetune.lr must be non-negative");
  if (finetune.batch_size < 1 || finetune.train_size < 1) {
    throw ConfigError("finetune.batch-size and finetune.train-size must be positive");
  }
  if (eval.episodes < 1 || eval.k < 1) throw ConfigError("eval.episodes and eval.k must be positive");
  if (eval.decode.beam_size < 1) throw ConfigError("eval.beam-size must be at least 1");
  if (eval.max_steps && (*eval.max_steps < 1 || *eval.max_steps > model.max_len)) {
    throw ConfigError("eval.max-steps must lie in [1, model.max-len]");
  }
  if (stats.window < 2) throw ConfigError("stats.window must be at least 2");
  make_schedule(*this);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeySpec& s : key_specs()) k.push_back(s.key);
    return k;
  }();
  return keys;
}

std::vector<ConfigAssignment> parse_config(std::istream& in, const std::string& source) {
  std::vector<ConfigAssignment> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected 'key = value'");
    out.push_back({std::move(key), std::move(value), where});
  }
  return out;
}

std::vector<ConfigAssignment> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config(in, path.string());
}

ExperimentConfig make_config(const std::vector<ConfigAssignment>& assignments) {
  ExperimentConfig config;
  auto apply = [&](const ConfigAssignment& a) {
    const KeySpec* spec = find_key(a.key);
    if (!spec) throw ConfigError(a.origin + ": unknown config key '" + a.key + "'");
    try {
      spec->set(config, a.value);
    } catch (const KeyError& e) {
      throw ConfigError(a.origin + ": " + a.key + ": " + e.message);
    }
  };
  for (const auto& a : assignments)
    if (a.key == "model.profile") apply(a);
  for (const auto& a : assignments)
    if (a.key != "model.profile") apply(a);
  config.finalize();
  return config;
}

std::string render_config(const ExperimentConfig& config) {
  std::ostringstream out;
  for (const KeySpec& s : key_specs()) out << s.key << " = " << s.get(config) << '\n';
  return out.str();
}

}  // namespace msl

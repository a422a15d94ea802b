#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msl/checkpoint.hpp"
#include "msl/harness.hpp"
#include "support.hpp"

using namespace msl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("msl_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string config_path(const std::string& name) { return std::string(MSL_CONFIG_DIR) + "/" + name; }

const char* kTinyCipher = R"(task.family = cipher
task.alphabet = 5
task.min-len = 2
task.max-len = 4
task.k-support = 2
task.k-target = 2
model.d-model = 8
model.n-heads = 2
model.d-k = 4
model.d-v = 4
model.d-ff = 16
model.max-len = 6
inner.n-steps = 3
inner.alpha = 0.1
outer.meta-batch-size = 2
outer.n-outer-iters = 20
finetune.epochs = 1
finetune.train-size = 4
eval.k = 4
eval.episodes = 1
eval.decode = greedy
stats.window = 5
)";

long count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  long n = 0;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults finalize") {
    const ExperimentConfig c = make_config({});
    CHECK(c.inner.n_steps >= 1);
    CHECK(c.model.src_vocab == TokenLayout::vocab_for_alphabet(c.task.alphabet));
    CHECK(c.task.task_pool.size() == static_cast<std::size_t>(c.source_tasks));
  }
  SUBCASE("assignments, comments and whitespace") {
    std::istringstream in("# comment\n\n  inner.alpha =  0.25  # trailing\nseed=9\n");
    const auto a = parse_config(in, "x.cfg");
    REQUIRE(a.size() == 2);
    CHECK(a[0].key == "inner.alpha");
    CHECK(a[0].value == "0.25");
    CHECK(a[0].origin == "x.cfg:3");
    const ExperimentConfig c = make_config(a);
    CHECK(c.inner.alpha == 0.25);
    CHECK(c.seed == 9);
  }
  SUBCASE("render round trip") {
    std::istringstream in(kTinyCipher);
    const ExperimentConfig c = make_config(parse_config(in, "tiny"));
    std::istringstream again(render_config(c));
    CHECK(render_config(make_config(parse_config(again, "rendered"))) == render_config(c));
    CHECK(config_keys().size() > 40);
  }
  SUBCASE("errors name the key and the line") {
    std::istringstream bad("inner.alpha = 0.1\nno equals sign\n");
    try {
      parse_config(bad, "bad.cfg");
      FAIL("expected a parse error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
    }
    try {
      make_config({{"innr.alpha", "0.1", "a.cfg:4"}});
      FAIL("expected an unknown key error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("innr.alpha") != std::string::npos);
      CHECK(std::string(e.what()).find("a.cfg:4") != std::string::npos);
    }
    CHECK_THROWS_AS(make_config({{"inner.n-steps", "two", "cli"}}), ConfigError);
    CHECK_THROWS_AS(make_config({{"inner.n-steps", "0", "cli"}}), ConfigError);
    CHECK_THROWS_AS(make_config({{"outer.mode", "reptile", "cli"}}), ConfigError);
    CHECK_THROWS_AS(make_config({{"task.max-len", "40", "cli"}}), ConfigError);
    CHECK_THROWS_AS(make_config({{"model.n-heads", "0", "cli"}}), ConfigError);
  }
  SUBCASE("full profile") {
    const ExperimentConfig c = make_config({{"model.d-model", "64", "cli"}, {"model.profile", "full", "cli"}});
    CHECK(c.model.n_encoder_layers == 2);
    CHECK(c.model.n_decoder_layers == 4);
    CHECK(c.model.dropout == 0.1);
    CHECK(c.model.d_model == 64);  // the profile is applied before other keys
  }
}

TEST_CASE("thread count from the environment") {
  unsetenv("MSL_THREADS");
  CHECK(thread_count_from_env() == 1);
  setenv("MSL_THREADS", "3", 1);
  CHECK(thread_count_from_env() == 3);
  setenv("MSL_THREADS", "zero", 1);
  CHECK_THROWS_AS(thread_count_from_env(), ConfigError);
  unsetenv("MSL_THREADS");
}

TEST_CASE("metrics lines") {
  RunRecord r{3, 0.1 + 0.2, {1.5, 0.30000000000000004}, {0.25, 0.75}, 12.5};
  const std::string line = metrics_line(r, MetaMode::msl, false);
  CHECK(line ==
        R"({"iter":3,"mode":"msl","outer_loss":0.30000000000000004,"step_losses":[1.5,0.30000000000000004],)"
        R"("weights":[0.25,0.75],"wall_ms":0.0})");
  CHECK(metrics_line(r, MetaMode::maml, true).find("\"wall_ms\":12.5") != std::string::npos);

  std::string text;
  for (long i = 0; i < 5; ++i) {
    r.outer_iter = i;
    r.outer_loss = 1.0 / static_cast<double>(i + 3);
    text += metrics_line(r, MetaMode::maml, false) + "\n";
  }
  for (std::size_t cut = 0; cut <= text.size(); ++cut) {
    std::istringstream in(text.substr(0, cut));
    const auto rows = read_metrics(in);
    const long complete = std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(cut), '\n');
    CHECK(static_cast<long>(rows.size()) >= complete);
    CHECK(static_cast<long>(rows.size()) <= complete + 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].iter == static_cast<long>(i));
      CHECK(rows[i].outer_loss == 1.0 / static_cast<double>(i + 3));
    }
  }
}

TEST_CASE("train") {
  TempDir dir("train");
  SUBCASE("no iterations leaves the initialization") {
    const CliResult r = cli({"train", "--config", config_path("quad.cfg"), "--outer.n-outer-iters", "0", "--out",
                             dir / "zero"});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir.path / "zero" / "metrics.jsonl").empty());
    std::istringstream in(slurp(dir.path / "zero" / "config.txt"));
    const ExperimentConfig c = make_config(parse_config(in, "config.txt"));
    CHECK(bit_equal(read_checkpoint(dir / "zero/checkpoint.bin"), initial_params(c)));
  }
  SUBCASE("sequence model without iterations") {
    write_file(dir.path / "tiny.cfg", kTinyCipher);
    REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--outer.n-outer-iters=0", "--out", dir / "seq"}).code == 0);
    std::istringstream in(kTinyCipher);
    const ExperimentConfig c = make_config(parse_config(in, "tiny"));
    CHECK(bit_equal(read_checkpoint(dir / "seq/checkpoint.bin"), initial_params(c)));
  }
  SUBCASE("repeat runs give identical files") {
    write_file(dir.path / "tiny.cfg", kTinyCipher);
    for (const char* leaf : {"a", "b"}) {
      REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--seed", "4", "--out", dir / leaf}).code == 0);
    }
    const std::string metrics = slurp(dir.path / "a" / "metrics.jsonl");
    CHECK(count_lines_starting(metrics, "{\"iter\":") == 20);
    CHECK(metrics == slurp(dir.path / "b" / "metrics.jsonl"));
    CHECK(slurp(dir.path / "a" / "checkpoint.bin") == slurp(dir.path / "b" / "checkpoint.bin"));
    REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--seed", "5", "--out", dir / "c"}).code == 0);
    CHECK(slurp(dir.path / "c" / "metrics.jsonl") != metrics);
  }
  SUBCASE("unknown key") {
    write_file(dir.path / "typo.cfg", "inner.n-steps = 2\ninnr.alpha = 0.1\n");
    const CliResult r = cli({"train", "--config", dir / "typo.cfg", "--out", dir / "typo"});
    CHECK(r.code == 2);
    CHECK(r.err.find("innr.alpha") != std::string::npos);
    CHECK(r.err.find("typo.cfg:2") != std::string::npos);
    CHECK(cli({"train", "--innr.alpha", "0.1", "--out", dir / "typo"}).code == 2);
    CHECK(cli({"train", "--config", dir / "missing.cfg"}).code == 2);
    CHECK(cli({"train", "--inner.alpha"}).code == 2);
    CHECK(cli({}).code == 2);
  }
  SUBCASE("divergence exits 3 and keeps the records so far") {
    const CliResult r = cli({"train", "--config", config_path("quad.cfg"), "--outer.optimizer", "sgd",
                             "--outer.meta-lr", "1e100", "--out", dir / "nan"});
    CHECK(r.code == 3);
    std::ifstream in(dir.path / "nan" / "metrics.jsonl");
    const auto rows = read_metrics(in);
    CHECK(rows.size() >= 1);
    CHECK(rows.size() < 200);
    CHECK(count_lines_starting(slurp(dir.path / "nan" / "metrics.jsonl"), "{") == static_cast<long>(rows.size()));
    CHECK_FALSE(fs::exists(dir.path / "nan" / "checkpoint.bin"));
  }
}

TEST_CASE("finetune-eval") {
  TempDir dir("finetune");
  write_file(dir.path / "tiny.cfg", kTinyCipher);
  REQUIRE(cli({"train", "--config", dir / "tiny.cfg", "--out", dir / "run"}).code == 0);
  const std::string ckpt = dir / "run/checkpoint.bin";

  SUBCASE("no epochs means no change") {
    REQUIRE(cli({"finetune-eval", "--config", dir / "tiny.cfg", "--checkpoint", ckpt, "--task", "1", "--epochs", "0",
                 "--out", dir / "run"})
                .code == 0);
    REQUIRE(cli({"train", "--config", config_path("quad.cfg"), "--out", dir / "q"}).code == 0);
    REQUIRE(cli({"finetune-eval", "--config", config_path("quad.cfg"), "--checkpoint", dir / "q/checkpoint.bin",
                 "--epochs", "0", "--out", dir / "q"})
                .code == 0);
    for (const char* leaf : {"run", "q"}) {
      std::istringstream rows(slurp(dir.path / leaf / "results.tsv"));
      std::string id, pre, post;
      REQUIRE(std::getline(rows, id, '\t'));
      std::getline(rows, pre, '\t');
      std::getline(rows, post);
      CHECK(pre == post);
    }
  }
  SUBCASE("rows are appended and deterministic") {
    for (int i = 0; i < 2; ++i) {
      REQUIRE(cli({"finetune-eval", "--config", dir / "tiny.cfg", "--checkpoint", ckpt, "--decode", "beam",
                   "--beam-size", "2", "--out", dir / "run"})
                  .code == 0);
    }
    std::istringstream rows(slurp(dir.path / "run" / "results.tsv"));
    std::string a, b, extra;
    std::getline(rows, a);
    std::getline(rows, b);
    CHECK(a == b);
    CHECK(a.rfind("0\t", 0) == 0);
    CHECK_FALSE(std::getline(rows, extra));
  }
  SUBCASE("corrupted or mismatched checkpoints exit 2") {
    std::string bytes = slurp(ckpt);
    bytes[0] = 'X';
    write_file(dir.path / "bad.bin", bytes);
    const CliResult r =
        cli({"finetune-eval", "--config", dir / "tiny.cfg", "--checkpoint", dir / "bad.bin", "--out", dir / "run"});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
    write_file(dir.path / "short.bin", slurp(ckpt).substr(0, 40));
    CHECK(cli({"finetune-eval", "--config", dir / "tiny.cfg", "--checkpoint", dir / "short.bin"}).code == 2);
    CHECK(cli({"finetune-eval", "--config", dir / "tiny.cfg", "--model.d-ff", "12", "--checkpoint", ckpt}).code == 2);
    CHECK(cli({"finetune-eval", "--config", dir / "tiny.cfg", "--checkpoint", dir / "absent.bin"}).code == 2);
  }
}

TEST_CASE("compare") {
  TempDir dir("compare");
  write_file(dir.path / "tiny.cfg", kTinyCipher);

  SUBCASE("single seed report structure") {
    const CliResult r = cli({"compare", "--config", dir / "tiny.cfg", "--out", dir / "one"});
    REQUIRE(r.code == 0);
    const std::string report = slurp(dir.path / "one" / "report.txt");
    CHECK(count_lines_starting(report, "windowed_std =") == 2);
    CHECK(count_lines_starting(report, "[maml seed=1]") == 1);
    CHECK(count_lines_starting(report, "[msl seed=1]") == 1);
    CHECK(count_lines_starting(report, "episode_hash =") == 2);
    CHECK(report.find("[improvement msl over maml]") != std::string::npos);
    for (const char* f : {"metrics_maml_seed1.jsonl", "metrics_msl_seed1.jsonl", "curve_maml_seed1.dat",
                          "curve_msl_seed1.dat", "config.txt"}) {
      CHECK(fs::exists(dir.path / "one" / f));
    }
  }
  SUBCASE("final-only weights reproduce the maml curve") {
    REQUIRE(cli({"compare", "--config", dir / "tiny.cfg", "--schedule.final-only", "true", "--schedule.decay", "0",
                 "--seeds", "2,3", "--out", dir / "hot"})
                .code == 0);
    for (const char* s : {"2", "3"}) {
      const std::string maml = slurp(dir.path / "hot" / (std::string("curve_maml_seed") + s + ".dat"));
      CHECK_FALSE(maml.empty());
      CHECK(maml == slurp(dir.path / "hot" / (std::string("curve_msl_seed") + s + ".dat")));
    }
    const std::string report = slurp(dir.path / "hot" / "report.txt");
    CHECK(count_lines_starting(report, "windowed_std =") == 4);
  }
  SUBCASE("baseline block") {
    REQUIRE(cli({"compare", "--config", dir / "tiny.cfg", "--eval.baseline", "true", "--outer.n-outer-iters", "3",
                 "--out", dir / "base"})
                .code == 0);
    const std::string report = slurp(dir.path / "base" / "report.txt");
    CHECK(count_lines_starting(report, "[baseline seed=1]") == 1);
    CHECK(count_lines_starting(report, "windowed_std =") == 2);
  }
}

TEST_CASE("emit-plot-data") {
  TempDir dir("plot");
  const CliResult t =
      cli({"train", "--config", config_path("quad.cfg"), "--outer.n-outer-iters", "100", "--out", dir / "run"});
  REQUIRE(t.code == 0);
  REQUIRE(cli({"emit-plot-data", dir / "run/metrics.jsonl", "--out", dir.path.string()}).code == 0);
  const std::string data = slurp(dir.path / "metrics.msl.dat");
  CHECK(std::count(data.begin(), data.end(), '\n') == 100);

  std::ifstream metrics(dir.path / "run" / "metrics.jsonl");
  const auto rows = read_metrics(metrics);
  std::istringstream in(data);
  long iter = 0;
  double loss = 0.0;
  std::size_t i = 0;
  while (in >> iter >> loss) {
    REQUIRE(i < rows.size());
    CHECK(iter == rows[i].iter);
    CHECK(loss == rows[i].outer_loss);
    ++i;
  }
  CHECK(i == rows.size());

  write_file(dir.path / "empty.jsonl", "");
  const CliResult empty = cli({"emit-plot-data", dir / "empty.jsonl"});
  CHECK(empty.code == 2);
  CHECK(empty.err.find("no metrics") != std::string::npos);
  CHECK(cli({"emit-plot-data", dir / "nowhere.jsonl"}).code == 2);
}

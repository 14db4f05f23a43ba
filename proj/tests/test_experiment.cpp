#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fatcc/errors.hpp"
#include "fatcc/evaluate.hpp"
#include "fatcc/experiment.hpp"

using namespace fatcc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("fatcc_exp_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

KeyValues parse_text(const std::string& text, const std::string& source = "test.cfg") {
  std::istringstream in(text);
  return KeyValues::parse(in, source);
}

// tiny but complete experiment; every test overrides what it needs
const char* kSmallConfig =
    "seed = 3\n"
    "synth.classes = 3\n"
    "synth.dims = 6\n"
    "synth.train_per_class = 20\n"
    "synth.test_per_class = 8\n"
    "synth.spread = 0.1\n"
    "partition.clients = 3\n"
    "model.hidden = 8,4\n"
    "train.rounds = 7\n"
    "train.lr = 0.05\n"
    "train.batch_size = 16\n"
    "attack.epsilon = 0.1\n"
    "attack.step_size = 0.02\n"
    "attack.steps = 2\n"
    "eval.steps = 3\n";

ExperimentConfig small_config(const fs::path& out, const std::vector<std::string>& overrides = {}) {
  auto kv = parse_text(kSmallConfig);
  kv.apply_override("output.path=" + out.string());
  for (const auto& o : overrides) kv.apply_override(o);
  return ExperimentConfig::from_key_values(kv);
}

double to_double(const std::string& s) { return std::stod(s); }

int run_shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("key-value parsing") {
  const auto kv = parse_text("# comment\n  a = 1  \n\nb=x y # trailing\n");
  CHECK(kv.entries.at("a").value == "1");
  CHECK(kv.entries.at("b").value == "x y");
  CHECK(kv.entries.at("b").origin == "test.cfg:4");
  CHECK_THROWS_WITH_AS(parse_text("a = 1\njunk\n"), doctest::Contains("test.cfg:2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_text("a = 1\na = 2\n"), doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(parse_text(" = 2\n"), ConfigError);

  auto over = parse_text("a = 1\n");
  over.apply_override("a=5");
  CHECK(over.entries.at("a").value == "5");
  CHECK_THROWS_AS(over.apply_override("nothing"), ConfigError);
}

TEST_CASE("config defaults") {
  const auto c = ExperimentConfig::from_key_values(KeyValues{});
  CHECK(c.round.train.learning_rate == 0.01);
  CHECK(c.round.train.batch_size == 128);
  CHECK(c.round.contrast.tau == 0.07);
  CHECK(c.round.calibration.alpha == 10.0);
  CHECK(c.round.calibration.beta == 5.0);
  CHECK(c.round.clients_per_round == 0);
  CHECK(c.methods == std::vector<Method>{Method::kFatcc});
  REQUIRE(c.eval_attacks.size() == 3);
  CHECK(c.eval_attacks[2].label() == "pgd40");
  CHECK(c.eval_attacks[2].epsilon == c.round.train_attack.epsilon);
  CHECK_FALSE(c.eval_attacks[2].random_start);
  CHECK(c.round.train_attack.random_start);
}

TEST_CASE("config values and diagnostics") {
  SUBCASE("fractions and lists") {
    auto kv = parse_text("attack.epsilon = 8/255\ntrain.method = fst, fedpgd\nmodel.hidden = 5\n");
    const auto c = ExperimentConfig::from_key_values(kv);
    CHECK(c.round.train_attack.epsilon == doctest::Approx(8.0 / 255.0));
    CHECK(c.methods == std::vector<Method>{Method::kFst, Method::kFedPgd});
    CHECK(c.hidden == std::vector<std::size_t>{5});
  }
  SUBCASE("unknown key names its line") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_key_values(parse_text("seed = 1\ntrain.lrr = 0.1\n")),
                         doctest::Contains("test.cfg:2: unknown key 'train.lrr'"), ConfigError);
  }
  SUBCASE("bad value names line and field") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_key_values(parse_text("\n\ntrain.rounds = many\n")),
                         doctest::Contains("test.cfg:3: train.rounds"), ConfigError);
  }
  SUBCASE("range checks name the field") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_key_values(parse_text("contrast.tau = 0\n")),
                         doctest::Contains("contrast.tau"), ConfigError);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_key_values(parse_text("train.method = fedprox\n")),
                         doctest::Contains("train.method"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values(parse_text("dataset.kind = idx\n")), ConfigError);
  }
}

TEST_CASE("evaluate: constant logits give the class-0 frequency") {
  ModelParams p;
  p.layers.push_back({Tensor::matrix(4, 3), std::vector<double>(4, 0.0)});
  p.layers.push_back({Tensor::matrix(10, 4), std::vector<double>(10, 0.25)});
  const Dataset test = synth_gaussian(10, 3, 7, 0.1, 2);
  const std::vector<AttackConfig> attacks{AttackConfig::evaluation(AttackKind::kPgd, 0.0, 3)};
  const auto r = evaluate(p, test, attacks);
  CHECK(r.clean_accuracy == doctest::Approx(0.1).epsilon(1e-15));
  REQUIRE(r.robust_accuracy.size() == 1);
  CHECK(r.robust_accuracy[0].second == r.clean_accuracy);
}

TEST_CASE("evaluate: zero budget attacks reproduce clean accuracy") {
  const Dataset test = synth_gaussian(4, 5, 10, 0.3, 9);
  const ModelParams p = init_mlp(std::vector<std::size_t>{5, 7, 4}, 4);
  std::vector<AttackConfig> attacks;
  for (AttackKind k : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd}) {
    attacks.push_back(AttackConfig::evaluation(k, 0.0));
  }
  const auto r = evaluate(p, test, attacks, 7);
  for (const auto& [name, ra] : r.robust_accuracy) CHECK(ra == r.clean_accuracy);
  CHECK(r.clean_accuracy == accuracy(p, test.inputs, test.labels));
}

TEST_CASE("FST on separable blobs reaches high clean accuracy") {
  TempDir dir;
  auto c = small_config(dir / "fst.csv", {"train.method=fst", "synth.classes=4", "synth.dims=16", "synth.spread=0.05",
                                          "synth.train_per_class=50", "model.hidden=32,16", "train.rounds=50",
                                          "train.local_epochs=2", "train.lr=0.1", "eval.attacks=fgsm"});
  const auto out = run_experiment(c);
  REQUIRE(out.size() == 1);
  CHECK(out[0].reports.back().clean_accuracy > 0.95);
}

TEST_CASE("report layout") {
  TempDir dir;
  const auto c = small_config(dir / "r.csv");
  const auto out = run_experiment(c);
  const auto t = CsvTable::read(dir / "r.csv");
  CHECK(t.header == std::vector<std::string>{"round", "ca", "ra_fgsm", "ra_bim3", "ra_pgd3", "train_loss"});
  REQUIRE(t.rows.size() == 8);
  for (std::size_t i = 0; i < 7; ++i) CHECK(t.rows[i][0] == std::to_string(i + 1));
  CHECK(t.rows[7][0] == "last5_mean");

  // summary row is the mean of the last five round rows
  for (std::size_t col = 1; col < t.header.size(); ++col) {
    double s = 0;
    for (std::size_t i = 2; i < 7; ++i) s += to_double(t.rows[i][col]);
    CHECK(std::abs(to_double(t.rows[7][col]) - s / 5.0) <= 1e-12);
  }
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t col = 1; col + 1 < t.header.size(); ++col) {
      CHECK(to_double(t.rows[i][col]) >= 0.0);
      CHECK(to_double(t.rows[i][col]) <= 1.0);
    }
  }
}

TEST_CASE("summarize_last with fewer rounds than the window") {
  std::vector<RoundReport> rs{{1, 0.5, {{"pgd40", 0.1}}, 2.0}, {2, 0.7, {{"pgd40", 0.3}}, 1.0}};
  const auto s = summarize_last(rs);
  CHECK(s.clean_accuracy == doctest::Approx(0.6));
  CHECK(s.robust_accuracy[0].second == doctest::Approx(0.2));
  CHECK(s.train_loss == doctest::Approx(1.5));
}

TEST_CASE("format_double round-trips") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 200; ++i) {
    const double v = u(rng);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("identical config and seed give byte-identical reports") {
  TempDir dir;
  run_experiment(small_config(dir / "a.csv", {"train.rounds=3"}));
  run_experiment(small_config(dir / "b.csv", {"train.rounds=3", "train.workers=3"}));
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  run_experiment(small_config(dir / "c.csv", {"train.rounds=3", "seed=4"}));
  CHECK_FALSE(slurp(dir / "a.csv") == slurp(dir / "c.csv"));
}

TEST_CASE("ablation sweep writes one report per method") {
  TempDir dir;
  const auto c = small_config(dir / "sweep.csv",
                              {"train.rounds=2", "train.method=fst,fedpgd,fatcc,fatcc-no-calib,fatcc-no-contrast"});
  const auto out = run_experiment(c);
  REQUIRE(out.size() == 5);
  const auto header = CsvTable::read(dir / "sweep_fst.csv").header;
  for (const char* m : {"fst", "fedpgd", "fatcc", "fatcc-no-calib", "fatcc-no-contrast"}) {
    const auto p = dir / (std::string("sweep_") + m + ".csv");
    REQUIRE(fs::exists(p));
    CHECK(CsvTable::read(p).header == header);
  }
}

TEST_CASE("output directory override") {
  TempDir dir;
  fs::create_directories(dir / "elsewhere");
  ::setenv(kOutputDirEnv, (dir / "elsewhere").c_str(), 1);
  const auto c = small_config(dir / "nested" / "r.csv", {"train.rounds=1"});
  const auto out = run_experiment(c);
  ::unsetenv(kOutputDirEnv);
  CHECK(out[0].path == dir / "elsewhere" / "r.csv");
  CHECK(fs::exists(dir / "elsewhere" / "r.csv"));
  CHECK_FALSE(fs::exists(dir / "nested" / "r.csv"));
}

TEST_CASE("compare_report") {
  TempDir dir;
  const std::string head = "round,ca,ra_pgd40,train_loss\n";
  write_file(dir / "a.csv", head + "1,0.9,0.4,0.5\nlast5_mean,0.9,0.4,0.5\n");
  write_file(dir / "b.csv", head + "1,0.85,0.45,0.5\nlast5_mean,0.85,0.45,0.5\n");
  write_file(dir / "c.csv", "round,ca,train_loss\nlast5_mean,0.85,0.5\n");

  for (const auto& d : compare_report(dir / "a.csv", dir / "a.csv")) CHECK(d.delta == 0.0);

  const auto d = compare_report(dir / "a.csv", dir / "b.csv");
  REQUIRE(d.size() == 3);
  CHECK(d[0].metric == "ca");
  CHECK(d[0].delta == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(d[1].delta == doctest::Approx(-0.05).epsilon(1e-12));
  CHECK(d[2].delta == 0.0);

  CHECK_THROWS_WITH_AS(compare_report(dir / "a.csv", dir / "c.csv"), doctest::Contains("'ra_pgd40'"), FormatError);

  std::ostringstream out;
  write_deltas_csv(out, d);
  CHECK(out.str().rfind("metric,a,b,delta\nca,0.9,0.85,", 0) == 0);
}

TEST_CASE("command-line tool") {
  const char* cli = std::getenv("FATCC_CLI");
  if (cli == nullptr) {
    MESSAGE("FATCC_CLI not set; skipping");
    return;
  }
  TempDir dir;
  write_file(dir / "exp.cfg", std::string(kSmallConfig) + "output.path = " + (dir / "out.csv").string() + "\n");
  const std::string exe = std::string("'") + cli + "'";
  const std::string cfg = "'" + (dir / "exp.cfg").string() + "'";

  CHECK(run_shell(exe + " run -q --config " + cfg + " train.rounds=2 > '" + (dir / "stdout.txt").string() + "'") == 0);
  CHECK(CsvTable::read(dir / "out.csv").rows.size() == 3);
  CHECK(slurp(dir / "stdout.txt").find("last5_mean") != std::string::npos);

  CHECK(run_shell(exe + " run -q --config " + cfg + " bogus.key=1 2> '" + (dir / "err.txt").string() + "'") == 2);
  CHECK(slurp(dir / "err.txt").find("bogus.key") != std::string::npos);

  write_file(dir / "bad.cfg", "seed = 1\ntrain.rounds = x\n");
  CHECK(run_shell(exe + " run --config '" + (dir / "bad.cfg").string() + "' 2> /dev/null") == 2);
  CHECK(run_shell(exe + " run --config '" + (dir / "absent.cfg").string() + "' 2> /dev/null") == 2);
  CHECK(run_shell(exe + " frobnicate 2> /dev/null") == 2);
  CHECK(run_shell(exe + " --help > /dev/null") == 0);

  CHECK(run_shell(exe + " compare '" + (dir / "out.csv").string() + "' '" + (dir / "out.csv").string() + "' > '" +
                  (dir / "cmp.txt").string() + "'") == 0);
  CHECK(slurp(dir / "cmp.txt").rfind("metric,a,b,delta\n", 0) == 0);
  CHECK(run_shell(exe + " compare '" + (dir / "out.csv").string() + "' '" + (dir / "missing.csv").string() +
                  "' 2> /dev/null") == 1);
}

#include "fatcc/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "fatcc/errors.hpp"

namespace fatcc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string origin = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(origin + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ": empty key");
    if (kv.entries.contains(key)) throw ConfigError(origin + ": duplicate key '" + key + "'");
    kv.entries[key] = {trim(line.substr(eq + 1)), origin};
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void KeyValues::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  entries[key] = {trim(assignment.substr(eq + 1)), "override"};
}

namespace {

// Typed reads over KeyValues that remember which keys were consumed so that
// unknown keys can be reported.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.entries.contains(key); }

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = kv_.entries.find(key);
    return it == kv_.entries.end() ? fallback : it->second.value;
  }

  double real(const std::string& key, double fallback) {
    return parse<double>(key, fallback, [](const std::string& s, double& out) {
      // accept simple fractions such as 8/255
      if (const auto slash = s.find('/'); slash != std::string::npos) {
        double num = 0, den = 0;
        if (!parse_number(s.substr(0, slash), num) || !parse_number(s.substr(slash + 1), den) || den == 0) return false;
        out = num / den;
        return true;
      }
      return parse_number(s, out);
    });
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    return parse<std::size_t>(key, fallback, [](const std::string& s, std::size_t& out) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      return ec == std::errc() && p == s.data() + s.size();
    });
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    return parse<std::uint64_t>(key, fallback, [](const std::string& s, std::uint64_t& out) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      return ec == std::errc() && p == s.data() + s.size();
    });
  }

  bool boolean(const std::string& key, bool fallback) {
    return parse<bool>(key, fallback, [](const std::string& s, bool& out) {
      if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
      if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
      return false;
    });
  }

  std::vector<std::string> list(const std::string& key, const std::string& fallback) {
    std::vector<std::string> out;
    for (auto& item : split(str(key, fallback), ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    auto it = kv_.entries.find(key);
    const std::string where = it == kv_.entries.end() ? "" : it->second.origin + ": ";
    throw ConfigError(where + key + ": " + why);
  }

  void reject_unknown() const {
    for (const auto& [key, entry] : kv_.entries) {
      if (!used_.contains(key)) throw ConfigError(entry.origin + ": unknown key '" + key + "'");
    }
  }

 private:
  static bool parse_number(const std::string& s, double& out) {
    const std::string t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    return ec == std::errc() && p == t.data() + t.size() && !t.empty();
  }

  template <class T, class F>
  T parse(const std::string& key, T fallback, F&& convert) {
    used_.insert(key);
    auto it = kv_.entries.find(key);
    if (it == kv_.entries.end()) return fallback;
    T out{};
    if (!convert(it->second.value, out)) fail(key, "cannot parse '" + it->second.value + "'");
    return out;
  }

  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  ConfigReader r(kv);
  ExperimentConfig c;

  c.seed = r.u64("seed", 0);

  const std::string kind = r.str("dataset.kind", "synthetic");
  if (kind == "synthetic") {
    c.dataset.kind = DatasetSpec::Kind::kSynthetic;
  } else if (kind == "idx") {
    c.dataset.kind = DatasetSpec::Kind::kIdx;
  } else {
    r.fail("dataset.kind", "expected 'synthetic' or 'idx', got '" + kind + "'");
  }
  c.dataset.train_images = r.str("dataset.train_images", "");
  c.dataset.train_labels = r.str("dataset.train_labels", "");
  c.dataset.test_images = r.str("dataset.test_images", "");
  c.dataset.test_labels = r.str("dataset.test_labels", "");
  c.dataset.subsample = r.real("dataset.subsample", 1.0);
  c.dataset.classes = r.count("synth.classes", c.dataset.classes);
  c.dataset.dims = r.count("synth.dims", c.dataset.dims);
  c.dataset.train_per_class = r.count("synth.train_per_class", c.dataset.train_per_class);
  c.dataset.test_per_class = r.count("synth.test_per_class", c.dataset.test_per_class);
  c.dataset.spread = r.real("synth.spread", c.dataset.spread);
  c.dataset.synth_seed = r.u64("synth.seed", c.dataset.synth_seed);

  c.partition.num_clients = r.count("partition.clients", c.partition.num_clients);
  c.partition.gamma = r.real("partition.gamma", c.partition.gamma);
  c.partition.seed = r.u64("partition.seed", c.seed);

  c.hidden.clear();
  for (const auto& w : r.list("model.hidden", "64,16")) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || p != w.data() + w.size() || v == 0) r.fail("model.hidden", "bad layer width '" + w + "'");
    c.hidden.push_back(v);
  }

  c.methods.clear();
  for (const auto& m : r.list("train.method", "fatcc")) {
    try {
      c.methods.push_back(parse_method(m));
    } catch (const ConfigError& e) {
      r.fail("train.method", e.what());
    }
  }
  c.rounds = r.count("train.rounds", c.rounds);
  c.round.train.learning_rate = r.real("train.lr", c.round.train.learning_rate);
  c.round.train.batch_size = r.count("train.batch_size", c.round.train.batch_size);
  c.round.train.local_epochs = r.count("train.local_epochs", c.round.train.local_epochs);
  c.round.train.seed = c.seed;
  c.round.workers = r.count("train.workers", 1);
  c.round.clients_per_round = r.count("train.clients_per_round", 0);

  auto& atk = c.round.train_attack;
  try {
    atk.kind = parse_attack_kind(r.str("attack.kind", "pgd"));
  } catch (const ConfigError& e) {
    r.fail("attack.kind", e.what());
  }
  atk.epsilon = r.real("attack.epsilon", atk.epsilon);
  atk.step_size = r.real("attack.step_size", atk.step_size);
  atk.steps = r.count("attack.steps", atk.steps);
  atk.random_start = r.boolean("attack.random_start", true);

  c.round.calibration.alpha = r.real("calib.alpha", c.round.calibration.alpha);
  c.round.calibration.beta = r.real("calib.beta", c.round.calibration.beta);
  c.round.calibration.enabled = r.boolean("calib.enabled", true);
  c.round.contrast.tau = r.real("contrast.tau", c.round.contrast.tau);
  c.round.contrast.lambda = r.real("contrast.lambda", c.round.contrast.lambda);
  c.round.contrast.enabled = r.boolean("contrast.enabled", true);
  const std::string features = r.str("contrast.features", "adversarial");
  if (features != "adversarial" && features != "clean") {
    r.fail("contrast.features", "expected 'adversarial' or 'clean', got '" + features + "'");
  }
  c.round.adversarial_prototypes = features == "adversarial";

  const double eval_eps = r.real("eval.epsilon", atk.epsilon);
  const std::size_t eval_steps = r.count("eval.steps", 40);
  const bool custom_step = r.has("eval.step_size");
  const double eval_step = r.real("eval.step_size", eval_eps / 10.0);
  c.eval_attacks.clear();
  for (const auto& name : r.list("eval.attacks", "fgsm,bim,pgd")) {
    AttackKind k{};
    try {
      k = parse_attack_kind(name);
    } catch (const ConfigError& e) {
      r.fail("eval.attacks", e.what());
    }
    AttackConfig a = AttackConfig::evaluation(k, eval_eps, eval_steps);
    if (custom_step) a.step_size = eval_step;
    c.eval_attacks.push_back(a);
  }

  c.output = r.str("output.path", "report.csv");

  r.reject_unknown();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (dataset.kind == DatasetSpec::Kind::kIdx) {
    for (const auto* p : {&dataset.train_images, &dataset.train_labels, &dataset.test_images, &dataset.test_labels}) {
      if (p->empty()) throw ConfigError("dataset.kind = idx needs dataset.train_images/train_labels/test_images/test_labels");
    }
  }
  if (!(dataset.subsample > 0.0 && dataset.subsample <= 1.0)) throw ConfigError("dataset.subsample: must lie in (0, 1]");
  if (dataset.classes < 2) throw ConfigError("synth.classes: need at least 2 classes");
  if (dataset.dims == 0 || dataset.train_per_class == 0 || dataset.test_per_class == 0) {
    throw ConfigError("synth.*: dims and per-class counts must be positive");
  }
  if (!(dataset.spread >= 0.0)) throw ConfigError("synth.spread: must be >= 0");
  if (partition.num_clients < 1) throw ConfigError("partition.clients: must be >= 1");
  if (!(partition.gamma > 0.0)) throw ConfigError("partition.gamma: must be > 0");
  if (hidden.empty()) throw ConfigError("model.hidden: need at least one hidden layer for the feature map");
  if (methods.empty()) throw ConfigError("train.method: no method given");
  if (rounds < 1) throw ConfigError("train.rounds: must be >= 1");
  if (!(round.train.learning_rate > 0.0)) throw ConfigError("train.lr: must be > 0");
  if (round.train.batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (round.train.local_epochs < 1) throw ConfigError("train.local_epochs: must be >= 1");
  if (!(round.train_attack.epsilon >= 0.0)) throw ConfigError("attack.epsilon: must be >= 0");
  if (!(round.train_attack.step_size >= 0.0)) throw ConfigError("attack.step_size: must be >= 0");
  if (round.train_attack.steps < 1) throw ConfigError("attack.steps: must be >= 1");
  if (!(round.calibration.alpha > 0.0)) throw ConfigError("calib.alpha: must be > 0");
  if (!(round.calibration.beta >= 0.0)) throw ConfigError("calib.beta: must be >= 0");
  if (!(round.contrast.tau > 0.0)) throw ConfigError("contrast.tau: must be > 0");
  if (!(round.contrast.lambda >= 0.0)) throw ConfigError("contrast.lambda: must be >= 0");
  for (const auto& a : eval_attacks) {
    if (!(a.epsilon >= 0.0)) throw ConfigError("eval.epsilon: must be >= 0");
    if (a.steps < 1) throw ConfigError("eval.steps: must be >= 1");
  }
}

LoadedData load_data(const DatasetSpec& spec, std::uint64_t seed) {
  LoadedData d;
  if (spec.kind == DatasetSpec::Kind::kIdx) {
    d.train = load_idx(spec.train_images, spec.train_labels);
    d.test = load_idx(spec.test_images, spec.test_labels);
    const std::size_t c = std::max(d.train.num_classes, d.test.num_classes);
    d.train.num_classes = d.test.num_classes = c;
  } else {
    d.train = synth_gaussian(spec.classes, spec.dims, spec.train_per_class, spec.spread, spec.synth_seed);
    d.test = synth_gaussian_split(spec.classes, spec.dims, spec.test_per_class, spec.spread, spec.synth_seed,
                                  derive_seed(spec.synth_seed, 0, 0x7e57));
  }
  if (spec.subsample < 1.0) d.train = subsample(d.train, spec.subsample, derive_seed(seed, 0, 0x5ab));
  d.train.validate();
  d.test.validate();
  return d;
}

std::filesystem::path report_path(const ExperimentConfig& config, Method method) {
  std::filesystem::path p = config.output;
  if (config.methods.size() > 1) {
    p.replace_filename(p.stem().string() + "_" + to_string(method) + p.extension().string());
  }
  if (const char* dir = std::getenv(kOutputDirEnv); dir != nullptr && *dir != '\0') {
    p = std::filesystem::path(dir) / p.filename();
  }
  return p;
}

RoundReport summarize_last(const std::vector<RoundReport>& reports, std::size_t window) {
  RoundReport s;
  if (reports.empty()) return s;
  const std::size_t n = std::min(window, reports.size());
  const auto first = reports.end() - static_cast<std::ptrdiff_t>(n);
  s.round = 0;
  s.robust_accuracy = first->robust_accuracy;
  for (auto& [name, v] : s.robust_accuracy) v = 0.0;
  for (auto it = first; it != reports.end(); ++it) {
    s.clean_accuracy += it->clean_accuracy;
    s.train_loss += it->train_loss;
    for (std::size_t a = 0; a < s.robust_accuracy.size(); ++a) s.robust_accuracy[a].second += it->robust_accuracy[a].second;
  }
  const double dn = static_cast<double>(n);
  s.clean_accuracy /= dn;
  s.train_loss /= dn;
  for (auto& [name, v] : s.robust_accuracy) v /= dn;
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_report_csv(std::ostream& out, const std::vector<RoundReport>& reports) {
  out << "round,ca";
  if (!reports.empty()) {
    for (const auto& [name, v] : reports.front().robust_accuracy) out << ",ra_" << name;
  }
  out << ",train_loss\n";
  auto row = [&](const std::string& label, const RoundReport& r) {
    out << label << ',' << format_double(r.clean_accuracy);
    for (const auto& [name, v] : r.robust_accuracy) out << ',' << format_double(v);
    out << ',' << format_double(r.train_loss) << '\n';
  };
  for (const auto& r : reports) row(std::to_string(r.round), r);
  if (!reports.empty()) row("last5_mean", summarize_last(reports));
}

std::vector<MethodOutcome> run_experiment(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  const LoadedData data = load_data(config.dataset, config.seed);
  const auto shards = dirichlet_partition(data.train, config.partition);

  std::vector<std::size_t> widths{data.train.dims()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(data.train.num_classes);
  const ModelParams initial = init_mlp(widths, derive_seed(config.seed, 0, 0));

  std::vector<MethodOutcome> outcomes;
  for (Method method : config.methods) {
    TrainingSetup setup;
    setup.shards = shards;
    setup.initial = initial;
    setup.round = config.round;
    setup.round.method = method;
    setup.eval_attacks = config.eval_attacks;
    setup.rounds = config.rounds;
    setup.master_seed = config.seed;

    auto progress = [&](const RoundReport& r) {
      if (!log) return;
      *log << to_string(method) << " round " << r.round << ": CA " << std::fixed << std::setprecision(2)
           << 100.0 * r.clean_accuracy << "%";
      for (const auto& [name, v] : r.robust_accuracy) *log << "  " << name << " " << 100.0 * v << "%";
      *log << "  loss " << std::setprecision(4) << r.train_loss << std::defaultfloat << '\n';
    };
    TrainingResult result = run_training(data.train, data.test, setup, progress);

    MethodOutcome o{method, report_path(config, method), std::move(result.reports), {}};
    o.summary = summarize_last(o.reports);
    if (o.path.has_parent_path()) std::filesystem::create_directories(o.path.parent_path());
    std::ofstream out(o.path, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot write report " + o.path.string());
    write_report_csv(out, o.reports);
    out.flush();
    if (!out) throw std::ios_base::failure("failed writing report " + o.path.string());
    if (log) *log << "wrote " << o.path.string() << '\n';
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  t.header = split(trim(line), ',');
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != t.header.size()) {
      throw FormatError(path.string() + ": row has " + std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

const std::vector<std::string>& CsvTable::row_labeled(const std::string& label) const {
  for (const auto& r : rows) {
    if (!r.empty() && r.front() == label) return r;
  }
  throw FormatError("no row labeled '" + label + "'");
}

std::vector<MetricDelta> compare_report(const std::filesystem::path& a, const std::filesystem::path& b) {
  const CsvTable ta = CsvTable::read(a);
  const CsvTable tb = CsvTable::read(b);
  auto column = [](const CsvTable& t, const std::string& name) -> std::ptrdiff_t {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    return it == t.header.end() ? -1 : it - t.header.begin();
  };
  for (const auto& name : ta.header) {
    if (column(tb, name) < 0) throw FormatError("column '" + name + "' missing from " + b.string());
  }
  for (const auto& name : tb.header) {
    if (column(ta, name) < 0) throw FormatError("column '" + name + "' missing from " + a.string());
  }
  const auto& ra = ta.row_labeled("last5_mean");
  const auto& rb = tb.row_labeled("last5_mean");
  auto number = [](const std::string& s, const std::string& where) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(where + ": not a number: '" + s + "'");
    return v;
  };
  std::vector<MetricDelta> out;
  for (std::size_t i = 1; i < ta.header.size(); ++i) {
    const std::string& name = ta.header[i];
    const double va = number(ra[i], a.string() + " " + name);
    const double vb = number(rb[static_cast<std::size_t>(column(tb, name))], b.string() + " " + name);
    out.push_back({name, va, vb, va - vb});
  }
  return out;
}

void write_deltas_csv(std::ostream& out, const std::vector<MetricDelta>& deltas) {
  out << "metric,a,b,delta\n";
  for (const auto& d : deltas) {
    out << d.metric << ',' << format_double(d.a) << ',' << format_double(d.b) << ',' << format_double(d.delta) << '\n';
  }
}

}  // namespace fatcc

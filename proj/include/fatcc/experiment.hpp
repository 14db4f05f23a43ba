#pragma once

// Config-driven experiment runner and CSV report handling.
//
// Config files are flat `key = value` lines; `#` starts a comment. Command-line
// overrides use the same `key=value` form and win over the file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fatcc/attacks.hpp"
#include "fatcc/data.hpp"
#include "fatcc/federation.hpp"

namespace fatcc {

/// Environment variable that, when set, redirects report files into that directory.
inline constexpr const char* kOutputDirEnv = "FATCC_OUTPUT_DIR";

struct KeyValues {
  struct Entry {
    std::string value;
    std::string origin;  // "path:line" or "override"
  };
  std::map<std::string, Entry> entries;

  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::filesystem::path& path);
  void apply_override(const std::string& assignment);
};

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx } kind = Kind::kSynthetic;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  double subsample = 1.0;  // fraction of the training set kept before partitioning
  std::size_t classes = 10;
  std::size_t dims = 32;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  double spread = 0.15;
  std::uint64_t synth_seed = 1;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  PartitionConfig partition;
  std::vector<std::size_t> hidden{64, 16};
  RoundConfig round;
  std::vector<Method> methods{Method::kFatcc};
  std::vector<AttackConfig> eval_attacks;
  std::size_t rounds = 30;
  std::uint64_t seed = 0;
  std::filesystem::path output = "report.csv";

  /// Throws ConfigError naming the offending key (and its line when known).
  static ExperimentConfig from_key_values(const KeyValues& kv);
  void validate() const;
};

struct LoadedData {
  Dataset train;
  Dataset test;
};

/// Builds (and subsamples) the train/test data described by `spec`.
LoadedData load_data(const DatasetSpec& spec, std::uint64_t seed);

/// Where the report for `method` goes: the configured path for a single
/// method, `<stem>_<method><ext>` for sweeps, relocated under
/// $FATCC_OUTPUT_DIR when that is set.
std::filesystem::path report_path(const ExperimentConfig& config, Method method);

/// Last-5 (or fewer) arithmetic means of every metric column.
RoundReport summarize_last(const std::vector<RoundReport>& reports, std::size_t window = 5);

void write_report_csv(std::ostream& out, const std::vector<RoundReport>& reports);

struct MethodOutcome {
  Method method;
  std::filesystem::path path;
  std::vector<RoundReport> reports;
  RoundReport summary;
};

/// Trains every configured method on the same data and partition and writes
/// one CSV per method. `log` receives human-readable progress (may be null).
std::vector<MethodOutcome> run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable read(const std::filesystem::path& path);
  /// The row whose first field is `label`; throws FormatError when absent.
  const std::vector<std::string>& row_labeled(const std::string& label) const;
};

struct MetricDelta {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // a - b
};

/// Per-metric differences between the summary rows of two reports.
std::vector<MetricDelta> compare_report(const std::filesystem::path& a, const std::filesystem::path& b);

void write_deltas_csv(std::ostream& out, const std::vector<MetricDelta>& deltas);

/// Shortest round-trip decimal form of `v`.
std::string format_double(double v);

}  // namespace fatcc

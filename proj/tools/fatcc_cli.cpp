// fatcc: run federated adversarial training experiments and compare reports.
//
//   fatcc run --config exp.cfg [key=value ...]
//   fatcc compare a.csv b.csv

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fatcc/errors.hpp"
#include "fatcc/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated adversarial training simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train the configured methods and write CSV reports");
  run->add_option("--config", config_path, "Flat key = value config file")->required()->check(CLI::ExistingFile);
  run->add_option("overrides", overrides, "key=value overrides applied after the config file");
  run->add_flag("-q,--quiet", quiet, "Suppress per-round progress");

  std::string csv_a, csv_b;
  auto* compare = app.add_subcommand("compare", "Per-metric deltas (a - b) between two report summary rows");
  compare->add_option("a", csv_a, "First report")->required();
  compare->add_option("b", csv_b, "Second report")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      auto kv = fatcc::KeyValues::load(config_path);
      for (const auto& o : overrides) kv.apply_override(o);
      const auto config = fatcc::ExperimentConfig::from_key_values(kv);
      const auto outcomes = fatcc::run_experiment(config, quiet ? nullptr : &std::cerr);
      for (const auto& o : outcomes) {
        std::cout << fatcc::to_string(o.method) << " last5_mean: CA " << 100.0 * o.summary.clean_accuracy << "%";
        for (const auto& [name, v] : o.summary.robust_accuracy) std::cout << "  " << name << " " << 100.0 * v << "%";
        std::cout << "  -> " << o.path.string() << '\n';
      }
    } else if (*compare) {
      fatcc::write_deltas_csv(std::cout, fatcc::compare_report(csv_a, csv_b));
    }
  } catch (const fatcc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

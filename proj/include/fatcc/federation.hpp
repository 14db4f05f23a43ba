#pragma once

// Round-based federated adversarial training: broadcast, parallel local
// updates, size-weighted parameter averaging and prototype aggregation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fatcc/attacks.hpp"
#include "fatcc/data.hpp"
#include "fatcc/nn.hpp"
#include "fatcc/objective.hpp"

namespace fatcc {

enum class Method {
  kFst,              // plain federated training, no attack
  kFedPgd,           // PGD adversarial training, plain CE
  kFatcc,            // adversarial training + calibration + prototype contrast
  kFatccNoCalib,     // adversarial training + prototype contrast
  kFatccNoContrast,  // adversarial training + calibration
};

std::string to_string(Method m);
Method parse_method(const std::string& name);
std::vector<Method> all_methods();

struct MethodTerms {
  bool adversarial = false;
  bool calibration = false;
  bool contrast = false;
};

MethodTerms terms_for(Method m);

struct RoundConfig {
  Method method = Method::kFatcc;
  TrainConfig train;
  AttackConfig train_attack;  // random start on by default
  CalibrationConfig calibration;
  ContrastConfig contrast;
  // build local prototypes from adversarial features; false uses clean inputs
  bool adversarial_prototypes = true;
  // 0 means every client participates every round
  std::size_t clients_per_round = 0;
  // concurrent client workers; results do not depend on this
  std::size_t workers = 1;

  void validate() const;
  /// Effective switches after combining the method with the per-term flags.
  MethodTerms active_terms() const;
};

struct ClientState {
  std::size_t client_id = 0;
  ClientShard shard;
  std::uint64_t seed = 0;
};

struct ServerState {
  ModelParams params;
  std::optional<PrototypeSet> prototypes;
  std::size_t round = 0;
};

struct LocalResult {
  ModelParams params;
  PrototypeSet prototypes;
  double mean_loss = 0.0;
  std::size_t num_samples = 0;
};

struct RoundReport {
  std::size_t round = 0;
  double clean_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> robust_accuracy;
  double train_loss = 0.0;
};

/// splitmix64-based seed for (master, round, client).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t round, std::uint64_t client);

/// Local epochs of mini-batch SGD on the client's shard, crafting adversarial
/// inputs per batch when the method calls for it. Prototypes accumulate over
/// every batch of every epoch. Contrast is inactive without global prototypes.
LocalResult local_update(const Dataset& data, const ClientState& client, const ModelParams& global_params,
                         const std::optional<PrototypeSet>& global_prototypes, const RoundConfig& config);

/// Sum_i (sizes_i / sum sizes) * params_i.
ModelParams fedavg(std::span<const ModelParams> params, std::span<const std::size_t> sizes);

struct TrainingResult {
  ServerState server;
  std::vector<RoundReport> reports;
};

struct TrainingSetup {
  std::vector<ClientShard> shards;
  ModelParams initial;
  RoundConfig round;
  std::vector<AttackConfig> eval_attacks;
  std::size_t rounds = 1;
  std::uint64_t master_seed = 0;
};

/// Runs the full round loop. `on_round` (optional) sees each report as it is
/// produced.
TrainingResult run_training(const Dataset& train, const Dataset& test, const TrainingSetup& setup,
                            const std::function<void(const RoundReport&)>& on_round = {});

}  // namespace fatcc

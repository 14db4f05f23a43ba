#include "fatcc/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "fatcc/errors.hpp"
#include "fatcc/evaluate.hpp"

namespace fatcc {

std::string to_string(Method m) {
  switch (m) {
    case Method::kFst: return "fst";
    case Method::kFedPgd: return "fedpgd";
    case Method::kFatcc: return "fatcc";
    case Method::kFatccNoCalib: return "fatcc-no-calib";
    case Method::kFatccNoContrast: return "fatcc-no-contrast";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods()) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "' (expected fst, fedpgd, fatcc, fatcc-no-calib or fatcc-no-contrast)");
}

std::vector<Method> all_methods() {
  return {Method::kFst, Method::kFedPgd, Method::kFatcc, Method::kFatccNoCalib, Method::kFatccNoContrast};
}

MethodTerms terms_for(Method m) {
  switch (m) {
    case Method::kFst: return {false, false, false};
    case Method::kFedPgd: return {true, false, false};
    case Method::kFatcc: return {true, true, true};
    case Method::kFatccNoCalib: return {true, false, true};
    case Method::kFatccNoContrast: return {true, true, false};
  }
  return {};
}

void RoundConfig::validate() const {
  train.validate();
  train_attack.validate();
  calibration.validate();
  contrast.validate();
}

MethodTerms RoundConfig::active_terms() const {
  MethodTerms t = terms_for(method);
  t.calibration = t.calibration && calibration.enabled;
  t.contrast = t.contrast && contrast.enabled;
  return t;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t round, std::uint64_t client) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ round) ^ client);
}

LocalResult local_update(const Dataset& data, const ClientState& client, const ModelParams& global_params,
                         const std::optional<PrototypeSet>& global_prototypes, const RoundConfig& config) {
  config.validate();
  if (client.shard.indices.empty()) throw DomainError("local_update: client " + std::to_string(client.client_id) + " has no data");
  const MethodTerms terms = config.active_terms();
  const std::size_t num_classes = global_params.num_classes();
  const bool use_contrast = terms.contrast && global_prototypes && !global_prototypes->empty();

  std::mt19937_64 rng(client.seed);
  ModelParams params = global_params;
  PrototypeAccumulator protos(num_classes, global_params.feature_dim());
  std::vector<std::size_t> order = client.shard.indices;
  std::vector<int> labels;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  for (std::size_t epoch = 0; epoch < config.train.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.train.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.train.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const Tensor x = gather_rows(data.inputs, batch);
      labels.clear();
      for (std::size_t i : batch) labels.push_back(data.labels[i]);

      const std::uint64_t attack_seed = rng();
      const Tensor x_train = terms.adversarial ? run_attack(params, x, labels, config.train_attack, attack_seed).perturbed : x;
      const ForwardTrace trace = forward(params, x_train);

      if (config.adversarial_prototypes || !terms.adversarial) {
        protos.add(trace.features(), labels);
      } else {
        protos.add(forward(params, x).features(), labels);
      }

      FatccLossSpec spec;
      if (terms.calibration) {
        spec.weights = modulating_weights(batch_class_stats(labels, num_classes), config.calibration);
      }
      if (use_contrast) spec.global = global_prototypes;
      spec.tau = config.contrast.tau;
      spec.lambda = config.contrast.lambda;

      const LossAndGrad lg = loss_and_output_grad(trace, labels, spec);
      if (!std::isfinite(lg.loss)) {
        throw DomainError("non-finite loss on client " + std::to_string(client.client_id) + ", epoch " +
                          std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      }
      const Gradients g = backward(params, trace, lg.grad);
      params = sgd_step(params, g.params, config.train.learning_rate);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      loss_count += batch.size();
    }
  }
  return {std::move(params), protos.finalize(), loss_sum / static_cast<double>(loss_count), client.shard.size()};
}

ModelParams fedavg(std::span<const ModelParams> params, std::span<const std::size_t> sizes) {
  if (params.empty()) throw std::invalid_argument("fedavg: no client parameters");
  if (params.size() != sizes.size()) throw std::invalid_argument("fedavg: params/sizes length mismatch");
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total == 0 || std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end()) {
    throw std::invalid_argument("fedavg: client sizes must be positive");
  }
  const std::size_t n = params.front().parameter_count();
  for (const auto& p : params) {
    if (p.parameter_count() != n || p.layers.size() != params.front().layers.size()) {
      throw ShapeError("fedavg: client parameter shapes differ");
    }
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      if (p.layers[k].weight.shape() != params.front().layers[k].weight.shape()) {
        throw ShapeError("fedavg: layer " + std::to_string(k) + " shapes differ");
      }
    }
  }
  if (params.size() == 1) return params.front();

  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double w = static_cast<double>(sizes[i]) / static_cast<double>(total);
    const auto flat = params[i].flatten();
    for (std::size_t j = 0; j < n; ++j) acc[j] += w * flat[j];
  }
  ModelParams out = params.front();
  out.assign_flat(acc);
  return out;
}

namespace {

std::vector<std::size_t> participants(const std::vector<ClientShard>& shards, std::size_t per_round,
                                      std::uint64_t master, std::size_t round) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (!shards[i].indices.empty()) ids.push_back(i);
  }
  if (per_round > 0 && per_round < ids.size()) {
    std::mt19937_64 rng(derive_seed(master, round, ~std::uint64_t{0}));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(per_round);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

}  // namespace

TrainingResult run_training(const Dataset& train, const Dataset& test, const TrainingSetup& setup,
                            const std::function<void(const RoundReport&)>& on_round) {
  if (setup.rounds < 1) throw DomainError("run_training: need at least one round");
  setup.round.validate();
  setup.initial.validate();
  if (setup.initial.num_classes() != train.num_classes) {
    throw ShapeError("model has " + std::to_string(setup.initial.num_classes()) + " outputs but the dataset has " +
                     std::to_string(train.num_classes) + " classes");
  }

  TrainingResult result;
  ServerState& server = result.server;
  server.params = setup.initial;

  for (std::size_t t = 1; t <= setup.rounds; ++t) {
    const auto ids = participants(setup.shards, setup.round.clients_per_round, setup.master_seed, t);
    if (ids.empty()) throw DomainError("run_training: no client holds any data");

    std::vector<std::optional<LocalResult>> results(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());
    auto work = [&](std::size_t slot) {
      const std::size_t id = ids[slot];
      try {
        ClientState client{id, setup.shards[id], derive_seed(setup.master_seed, t, id)};
        results[slot] = local_update(train, client, server.params, server.prototypes, setup.round);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };

    const std::size_t workers = std::clamp<std::size_t>(setup.round.workers, 1, ids.size());
    if (workers == 1) {
      for (std::size_t s = 0; s < ids.size(); ++s) work(s);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t s = next++; s < ids.size(); s = next++) work(s);
        });
      }
    }

    for (std::size_t s = 0; s < ids.size(); ++s) {
      if (!errors[s]) continue;
      try {
        std::rethrow_exception(errors[s]);
      } catch (const std::exception& e) {
        throw std::runtime_error("round " + std::to_string(t) + ", client " + std::to_string(ids[s]) + ": " + e.what());
      }
    }

    std::vector<ModelParams> locals;
    std::vector<std::size_t> sizes;
    std::vector<PrototypeSet> local_protos;
    double loss = 0.0;
    std::size_t samples = 0;
    for (auto& r : results) {
      loss += r->mean_loss * static_cast<double>(r->num_samples);
      samples += r->num_samples;
      sizes.push_back(r->num_samples);
      locals.push_back(std::move(r->params));
      local_protos.push_back(std::move(r->prototypes));
    }
    server.params = fedavg(locals, sizes);
    server.prototypes = aggregate_global(local_protos);
    server.round = t;

    const EvalResult eval = evaluate(server.params, test, setup.eval_attacks);
    RoundReport report{t, eval.clean_accuracy, eval.robust_accuracy, loss / static_cast<double>(samples)};
    if (on_round) on_round(report);
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace fatcc

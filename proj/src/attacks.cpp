#include "fatcc/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fatcc/errors.hpp"
#include "fatcc/objective.hpp"

namespace fatcc {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kPgd: return "pgd";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "bim") return AttackKind::kBim;
  if (name == "pgd") return AttackKind::kPgd;
  throw ConfigError("unknown attack kind '" + name + "' (expected fgsm, bim or pgd)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw DomainError("attack epsilon must be >= 0");
  if (!(step_size >= 0.0)) throw DomainError("attack step size must be >= 0");
  if (steps < 1) throw DomainError("attack needs at least one step");
  if (!(clamp_min <= clamp_max)) throw DomainError("attack clamp range is empty");
}

AttackConfig AttackConfig::evaluation(AttackKind kind, double epsilon, std::size_t steps) {
  AttackConfig c;
  c.kind = kind;
  c.epsilon = epsilon;
  c.step_size = epsilon / 10.0;
  c.steps = kind == AttackKind::kFgsm ? 1 : steps;
  c.random_start = false;
  return c;
}

std::string AttackConfig::label() const {
  if (kind == AttackKind::kFgsm) return "fgsm";
  return to_string(kind) + std::to_string(steps);
}

Tensor input_gradient(const ModelParams& params, const Tensor& x, std::span<const int> y) {
  return backprop(params, x, y, PlainCE{}).input_grads;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

AdversarialBatch finish(const Tensor& x, Tensor adv) {
  AdversarialBatch out{x, std::move(adv), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) out.delta.data()[i] = out.perturbed.data()[i] - x.data()[i];
  return out;
}

}  // namespace

AdversarialBatch fgsm(const ModelParams& params, const Tensor& x, std::span<const int> y, double epsilon,
                      double clamp_min, double clamp_max) {
  if (!(epsilon >= 0.0)) throw DomainError("attack epsilon must be >= 0");
  const Tensor g = input_gradient(params, x, y);
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double x0 = x.data()[i];
    const double s = sign(g.data()[i]);
    double v = x0;
    if (s > 0.0) v = x0 + epsilon;
    if (s < 0.0) v = x0 - epsilon;
    adv.data()[i] = std::clamp(v, clamp_min, clamp_max);
  }
  return finish(x, std::move(adv));
}

AdversarialBatch pgd(const ModelParams& params, const Tensor& x, std::span<const int> y, const AttackConfig& config,
                     std::uint64_t seed) {
  config.validate();
  const double eps = config.epsilon;
  Tensor adv = x;
  if (config.random_start && eps > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-eps, eps);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv.data()[i] = std::clamp(x.data()[i] + u(rng), config.clamp_min, config.clamp_max);
    }
  }
  if (eps == 0.0) return finish(x, std::move(adv));

  for (std::size_t step = 0; step < config.steps; ++step) {
    const Tensor g = input_gradient(params, adv, y);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double x0 = x.data()[i];
      const double s = sign(g.data()[i]);
      double v = adv.data()[i];
      if (s > 0.0) v = v + config.step_size;
      if (s < 0.0) v = v - config.step_size;
      v = std::clamp(v, config.clamp_min, config.clamp_max);
      v = std::min(v, x0 + eps);
      v = std::max(v, x0 - eps);
      adv.data()[i] = v;
    }
  }
  return finish(x, std::move(adv));
}

AdversarialBatch bim(const ModelParams& params, const Tensor& x, std::span<const int> y, const AttackConfig& config) {
  AttackConfig c = config;
  c.random_start = false;
  return pgd(params, x, y, c);
}

AdversarialBatch run_attack(const ModelParams& params, const Tensor& x, std::span<const int> y,
                            const AttackConfig& config, std::uint64_t seed) {
  switch (config.kind) {
    case AttackKind::kFgsm: return fgsm(params, x, y, config.epsilon, config.clamp_min, config.clamp_max);
    case AttackKind::kBim: return bim(params, x, y, config);
    case AttackKind::kPgd: return pgd(params, x, y, config, seed);
  }
  throw DomainError("unknown attack kind");
}

}  // namespace fatcc

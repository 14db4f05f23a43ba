#pragma once

// White-box l-infinity attacks against the plain cross-entropy of a model.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "fatcc/nn.hpp"
#include "fatcc/tensor.hpp"

namespace fatcc {

enum class AttackKind { kFgsm, kBim, kPgd };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 0.3;
  double step_size = 0.01;
  std::size_t steps = 10;
  bool random_start = true;
  double clamp_min = 0.0;
  double clamp_max = 1.0;

  void validate() const;

  /// Evaluation preset: `steps` iterations (40 by default), step epsilon / 10,
  /// no random start.
  static AttackConfig evaluation(AttackKind kind, double epsilon, std::size_t steps = 40);

  /// Short column label, e.g. "fgsm", "bim40", "pgd40".
  std::string label() const;
};

struct AdversarialBatch {
  Tensor original;
  Tensor perturbed;
  Tensor delta;  // perturbed - original
};

/// Gradient of the mean plain cross-entropy w.r.t. every input element.
Tensor input_gradient(const ModelParams& params, const Tensor& x, std::span<const int> y);

AdversarialBatch fgsm(const ModelParams& params, const Tensor& x, std::span<const int> y, double epsilon,
                      double clamp_min = 0.0, double clamp_max = 1.0);

/// Projected sign-gradient ascent: optional U[-eps, eps] start, then `steps`
/// iterations of x <- proj_{B(x0, eps)}(clamp(x + step * sign(grad))).
/// `seed` drives the random start only.
AdversarialBatch pgd(const ModelParams& params, const Tensor& x, std::span<const int> y, const AttackConfig& config,
                     std::uint64_t seed = 0);

/// pgd with the random start disabled.
AdversarialBatch bim(const ModelParams& params, const Tensor& x, std::span<const int> y, const AttackConfig& config);

/// Dispatches on config.kind (fgsm uses config.epsilon only).
AdversarialBatch run_attack(const ModelParams& params, const Tensor& x, std::span<const int> y,
                            const AttackConfig& config, std::uint64_t seed = 0);

}  // namespace fatcc

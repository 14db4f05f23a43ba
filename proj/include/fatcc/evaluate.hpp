#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fatcc/attacks.hpp"
#include "fatcc/data.hpp"
#include "fatcc/nn.hpp"

namespace fatcc {

struct EvalResult {
  double clean_accuracy = 0.0;
  // (attack label, robust accuracy), in the order the attacks were given
  std::vector<std::pair<std::string, double>> robust_accuracy;
};

/// Fraction of rows whose argmax prediction (ties to the lowest class) equals the label.
double accuracy(const ModelParams& params, const Tensor& inputs, std::span<const int> labels);

/// Clean accuracy plus robust accuracy under each attack. Attacks always run
/// without a random start here so evaluation is deterministic.
EvalResult evaluate(const ModelParams& params, const Dataset& test, std::span<const AttackConfig> attacks,
                    std::size_t batch_size = 250);

}  // namespace fatcc

#pragma once

// Test-only oracles and fixtures. Nothing here calls the analytic gradient
// code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fatcc/nn.hpp"
#include "fatcc/objective.hpp"
#include "fatcc/tensor.hpp"

namespace fatcc::testing {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = 0.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (int& v : y) v = u(rng);
  return y;
}

/// Random MLP with nonzero biases so ReLU kinks are unlikely to sit on a sample.
inline ModelParams random_mlp(const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
  ModelParams p = init_mlp(widths, rng());
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& l : p.layers) {
    for (double& b : l.bias) b = u(rng);
  }
  return p;
}

/// Central differences of `f` w.r.t. every entry of `x` (modified in place and restored).
inline std::vector<double> central_differences(std::vector<double>& x, const std::function<double()>& f,
                                               double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Direct-formula evaluation of the prototype contrast loss for one sample:
/// -log(psi_pos / (psi_pos + sum_neg psi)), psi = exp(cos / tau). Written from
/// the formula with plain loops; shares no code with the library.
inline double direct_contrast(const std::vector<double>& h, int label,
                              const std::vector<std::vector<double>>& protos, const std::vector<bool>& present,
                              double tau) {
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / ((std::sqrt(na) + 1e-12) * (std::sqrt(nb) + 1e-12));
  };
  if (!present[static_cast<std::size_t>(label)]) return 0.0;
  const double pos = std::exp(cosine(h, protos[static_cast<std::size_t>(label)]) / tau);
  double neg = 0.0;
  for (std::size_t k = 0; k < protos.size(); ++k) {
    if (present[k] && k != static_cast<std::size_t>(label)) neg += std::exp(cosine(h, protos[k]) / tau);
  }
  return -std::log(pos / (pos + neg));
}

}  // namespace fatcc::testing

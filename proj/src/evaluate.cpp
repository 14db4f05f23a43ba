#include "fatcc/evaluate.hpp"

#include <algorithm>
#include <numeric>

#include "fatcc/errors.hpp"

namespace fatcc {

double accuracy(const ModelParams& params, const Tensor& inputs, std::span<const int> labels) {
  if (labels.empty()) throw DomainError("accuracy of an empty set is undefined");
  const auto pred = predict(params, inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

EvalResult evaluate(const ModelParams& params, const Dataset& test, std::span<const AttackConfig> attacks,
                    std::size_t batch_size) {
  if (test.size() == 0) throw DomainError("evaluate: empty test set");
  batch_size = std::max<std::size_t>(batch_size, 1);

  std::size_t clean_correct = 0;
  std::vector<std::size_t> robust_correct(attacks.size(), 0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t end = std::min(test.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = gather_rows(test.inputs, idx);
    const std::span<const int> y(test.labels.data() + start, end - start);

    const auto clean = predict(params, x);
    for (std::size_t i = 0; i < y.size(); ++i) clean_correct += clean[i] == y[i] ? 1 : 0;

    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackConfig cfg = attacks[a];
      cfg.random_start = false;
      const auto adv = run_attack(params, x, y, cfg);
      const auto pred = predict(params, adv.perturbed);
      for (std::size_t i = 0; i < y.size(); ++i) robust_correct[a] += pred[i] == y[i] ? 1 : 0;
    }
  }

  const double n = static_cast<double>(test.size());
  EvalResult r;
  r.clean_accuracy = static_cast<double>(clean_correct) / n;
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    r.robust_accuracy.emplace_back(attacks[a].label(), static_cast<double>(robust_correct[a]) / n);
  }
  return r;
}

}  // namespace fatcc

#pragma once

// Local training objective: class-frequency logit calibration, class
// prototypes and the prototype contrast term, plus the loss-aware backprop
// entry point that ties them to the network.

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fatcc/nn.hpp"
#include "fatcc/tensor.hpp"

namespace fatcc {

struct CalibrationConfig {
  double alpha = 10.0;
  double beta = 5.0;
  bool enabled = true;

  void validate() const;
};

struct ContrastConfig {
  double tau = 0.07;
  double lambda = 1.0;
  bool enabled = true;

  void validate() const;
};

struct BatchClassStats {
  std::vector<std::size_t> counts;
  std::size_t batch_size = 0;
  std::vector<double> frequencies;
};

/// Per-class logit multipliers, one per class.
struct ClassWeights {
  std::vector<double> w;
};

/// Norm guard used by every cosine similarity in this module.
inline constexpr double kCosineNormGuard = 1e-12;

/// One optional feature vector per class. Absent classes had no contributor.
class PrototypeSet {
 public:
  PrototypeSet() = default;
  PrototypeSet(std::size_t num_classes, std::size_t width)
      : width_(width), protos_(num_classes) {}

  std::size_t num_classes() const { return protos_.size(); }
  std::size_t width() const { return width_; }
  std::size_t present_count() const;
  bool empty() const { return present_count() == 0; }

  bool has(std::size_t c) const { return c < protos_.size() && protos_[c].has_value(); }
  const std::vector<double>& at(std::size_t c) const { return *protos_.at(c); }
  const std::optional<std::vector<double>>& slot(std::size_t c) const { return protos_.at(c); }

  /// Throws ShapeError if `v` does not have the set's width.
  void set(std::size_t c, std::vector<double> v);
  void clear(std::size_t c) { protos_.at(c).reset(); }

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;

 private:
  std::size_t width_ = 0;
  std::vector<std::optional<std::vector<double>>> protos_;
};

/// Running per-class sums used to build a client's local prototypes across
/// every batch of its local training.
class PrototypeAccumulator {
 public:
  PrototypeAccumulator(std::size_t num_classes, std::size_t width);

  void add(const Tensor& features, std::span<const int> labels);
  PrototypeSet finalize() const;
  std::size_t count(std::size_t c) const { return counts_.at(c); }

 private:
  std::size_t width_;
  std::vector<std::vector<double>> sums_;
  std::vector<std::size_t> counts_;
};

BatchClassStats batch_class_stats(std::span<const int> labels, std::size_t num_classes);

/// w_j = alpha * (1 - p_j)^beta.
ClassWeights modulating_weights(const BatchClassStats& stats, const CalibrationConfig& config);

/// Cross-entropy of logits scaled elementwise by the class weights.
double calibrated_ce(const Tensor& logits, const ClassWeights& weights, std::span<const int> labels);

PrototypeSet local_prototypes(const Tensor& features, std::span<const int> labels, std::size_t num_classes);

/// Mean of each class prototype over the sets that contain it.
PrototypeSet aggregate_global(std::span<const PrototypeSet> sets);

/// cos(a, b) with both norms padded by kCosineNormGuard.
double guarded_cosine(std::span<const double> a, std::span<const double> b);

/// Supervised contrast of each feature against the global prototypes: the
/// sample's own class prototype is the positive, every other present prototype
/// a negative, similarity exp(cos / tau). Averaged over the whole batch;
/// samples without a positive prototype contribute zero.
double contrastive_loss(const Tensor& features, std::span<const int> labels, const PrototypeSet& global, double tau);

/// Per-sample contrast loss values (same conventions as contrastive_loss).
std::vector<double> contrastive_loss_per_sample(const Tensor& features, std::span<const int> labels,
                                                const PrototypeSet& global, double tau);

/// Mean over samples that have a positive prototype of
/// sum_k psi(H, G_k) / psi(H, G_pos). Diagnostic only.
double taylor_ratio_diagnostic(const Tensor& features, std::span<const int> labels, const PrototypeSet& global,
                               double tau);

/// Which terms of the local objective are active and with what inputs.
struct FatccLossSpec {
  std::optional<ClassWeights> weights;  // none: plain cross-entropy
  std::optional<PrototypeSet> global;  // none or empty: contrast inactive
  double tau = 0.07;
  double lambda = 1.0;
};

struct PlainCE {};
struct CalibratedCE {
  ClassWeights weights;
};

using LossSpec = std::variant<PlainCE, CalibratedCE, FatccLossSpec>;

/// calibrated_ce (or plain CE) + lambda * contrastive_loss.
double fatcc_local_loss(const ForwardTrace& trace, std::span<const int> labels, const FatccLossSpec& spec);

double evaluate_loss(const ForwardTrace& trace, std::span<const int> labels, const LossSpec& spec);

/// Loss value and its gradient w.r.t. the network outputs.
struct LossAndGrad {
  double loss = 0.0;
  OutputGrad grad;
};

LossAndGrad loss_and_output_grad(const ForwardTrace& trace, std::span<const int> labels, const LossSpec& spec);

struct BackpropResult {
  double loss = 0.0;
  ModelParams param_grads;
  Tensor input_grads;
};

/// Exact gradients of the chosen loss w.r.t. every parameter and every input.
BackpropResult backprop(const ModelParams& params, const Tensor& input, std::span<const int> labels,
                        const LossSpec& spec);

}  // namespace fatcc

#include "fatcc/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fatcc/errors.hpp"

namespace fatcc {

void CalibrationConfig::validate() const {
  if (!(alpha > 0.0)) throw DomainError("calibration alpha must be > 0");
  if (!(beta >= 0.0)) throw DomainError("calibration beta must be >= 0");
}

void ContrastConfig::validate() const {
  if (!(tau > 0.0)) throw DomainError("contrast temperature must be > 0");
  if (!(lambda >= 0.0)) throw DomainError("contrast lambda must be >= 0");
}

std::size_t PrototypeSet::present_count() const {
  return static_cast<std::size_t>(std::count_if(protos_.begin(), protos_.end(), [](const auto& p) { return p.has_value(); }));
}

void PrototypeSet::set(std::size_t c, std::vector<double> v) {
  if (v.size() != width_) {
    throw ShapeError("prototype width " + std::to_string(v.size()) + " != set width " + std::to_string(width_));
  }
  protos_.at(c) = std::move(v);
}

PrototypeAccumulator::PrototypeAccumulator(std::size_t num_classes, std::size_t width)
    : width_(width), sums_(num_classes, std::vector<double>(width, 0.0)), counts_(num_classes, 0) {}

void PrototypeAccumulator::add(const Tensor& features, std::span<const int> labels) {
  if (features.rows() != labels.size()) throw ShapeError("prototype accumulation: feature/label count mismatch");
  if (features.size() > 0 && features.cols() != width_) throw ShapeError("prototype accumulation: feature width mismatch");
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= sums_.size()) throw DomainError("prototype label out of range");
    auto f = features.row(r);
    auto& s = sums_[static_cast<std::size_t>(y)];
    for (std::size_t i = 0; i < width_; ++i) s[i] += f[i];
    ++counts_[static_cast<std::size_t>(y)];
  }
}

PrototypeSet PrototypeAccumulator::finalize() const {
  PrototypeSet out(sums_.size(), width_);
  for (std::size_t c = 0; c < sums_.size(); ++c) {
    if (counts_[c] == 0) continue;
    std::vector<double> mean = sums_[c];
    const double n = static_cast<double>(counts_[c]);
    for (double& v : mean) v /= n;
    out.set(c, std::move(mean));
  }
  return out;
}

BatchClassStats batch_class_stats(std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw DomainError("batch_class_stats: empty batch");
  BatchClassStats s;
  s.counts.assign(num_classes, 0);
  s.batch_size = labels.size();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DomainError("batch_class_stats: label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++s.counts[static_cast<std::size_t>(y)];
  }
  s.frequencies.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    s.frequencies[c] = static_cast<double>(s.counts[c]) / static_cast<double>(s.batch_size);
  }
  return s;
}

ClassWeights modulating_weights(const BatchClassStats& stats, const CalibrationConfig& config) {
  config.validate();
  ClassWeights w;
  w.w.reserve(stats.frequencies.size());
  // (B - n_j) / B is exact up to one rounding, unlike 1 - p_j
  const bool have_counts = stats.batch_size > 0 && stats.counts.size() == stats.frequencies.size();
  for (std::size_t j = 0; j < stats.frequencies.size(); ++j) {
    const double rest = have_counts ? static_cast<double>(stats.batch_size - stats.counts[j]) /
                                          static_cast<double>(stats.batch_size)
                                    : 1.0 - stats.frequencies[j];
    w.w.push_back(config.alpha * std::pow(rest, config.beta));
  }
  return w;
}

namespace {

Tensor scale_logits(const Tensor& logits, const ClassWeights& weights) {
  if (weights.w.size() != logits.cols()) {
    throw ShapeError("calibration weights have length " + std::to_string(weights.w.size()) + ", expected " +
                     std::to_string(logits.cols()));
  }
  Tensor scaled = logits;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    auto row = scaled.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] *= weights.w[j];
  }
  return scaled;
}

// d/dz of mean CE with softmax over `logits`, written into `out` (same shape).
void ce_logit_grad(const Tensor& logits, std::span<const int> labels, Tensor& out) {
  const std::size_t n = logits.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto z = logits.row(r);
    auto g = out.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      g[j] = std::exp(z[j] - m);
      s += g[j];
    }
    for (std::size_t j = 0; j < z.size(); ++j) g[j] = g[j] / s * inv_n;
    g[static_cast<std::size_t>(labels[r])] -= inv_n;
  }
}

double norm(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

void check_contrast_inputs(const Tensor& features, std::span<const int> labels, const PrototypeSet& global, double tau) {
  if (!(tau > 0.0)) throw DomainError("contrast temperature must be > 0");
  if (features.rows() != labels.size()) throw ShapeError("contrast: feature/label count mismatch");
  if (!global.empty() && features.size() > 0 && features.cols() != global.width()) {
    throw ShapeError("contrast: feature width " + std::to_string(features.cols()) + " != prototype width " +
                     std::to_string(global.width()));
  }
}

// Scaled cosine logits s_k = cos(H, G_k) / tau for every present prototype.
struct SampleScores {
  std::vector<std::size_t> classes;
  std::vector<double> cos;
  std::size_t positive = 0;  // index into classes
};

std::optional<SampleScores> sample_scores(std::span<const double> h, int label, const PrototypeSet& global) {
  if (label < 0 || !global.has(static_cast<std::size_t>(label))) return std::nullopt;
  SampleScores s;
  for (std::size_t c = 0; c < global.num_classes(); ++c) {
    if (!global.has(c)) continue;
    if (c == static_cast<std::size_t>(label)) s.positive = s.classes.size();
    s.classes.push_back(c);
    s.cos.push_back(guarded_cosine(h, global.at(c)));
  }
  return s;
}

// -log softmax(cos / tau)[positive]
double sample_contrast(const SampleScores& s, double tau) {
  double m = -INFINITY;
  for (double c : s.cos) m = std::max(m, c / tau);
  double acc = 0.0;
  for (double c : s.cos) acc += std::exp(c / tau - m);
  return std::log(acc) + m - s.cos[s.positive] / tau;
}

void contrast_feature_grad(const Tensor& features, std::span<const int> labels, const PrototypeSet& global, double tau,
                           double scale, Tensor& out) {
  const std::size_t n = features.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto h = features.row(r);
    auto s = sample_scores(h, labels[r], global);
    if (!s) continue;
    double m = -INFINITY;
    for (double c : s->cos) m = std::max(m, c / tau);
    std::vector<double> soft(s->cos.size());
    double z = 0.0;
    for (std::size_t k = 0; k < soft.size(); ++k) {
      soft[k] = std::exp(s->cos[k] / tau - m);
      z += soft[k];
    }
    const double h_norm = norm(h);
    const double a = h_norm + kCosineNormGuard;
    auto g = out.row(r);
    for (std::size_t k = 0; k < soft.size(); ++k) {
      const double dl_ds = soft[k] / z - (k == s->positive ? 1.0 : 0.0);
      if (dl_ds == 0.0) continue;
      const auto& proto = global.at(s->classes[k]);
      const double b = norm(proto) + kCosineNormGuard;
      const double dot = std::inner_product(h.begin(), h.end(), proto.begin(), 0.0);
      const double coef = scale * inv_n * dl_ds / tau;
      // d cos / dH = G / (a b) - (H.G) / (a^2 b) * H / |H|
      const double radial = h_norm > 0.0 ? dot / (a * a * b * h_norm) : 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) g[i] += coef * (proto[i] / (a * b) - radial * h[i]);
    }
  }
}

}  // namespace

double calibrated_ce(const Tensor& logits, const ClassWeights& weights, std::span<const int> labels) {
  return cross_entropy(scale_logits(logits, weights), labels);
}

PrototypeSet local_prototypes(const Tensor& features, std::span<const int> labels, std::size_t num_classes) {
  PrototypeAccumulator acc(num_classes, features.cols());
  acc.add(features, labels);
  return acc.finalize();
}

PrototypeSet aggregate_global(std::span<const PrototypeSet> sets) {
  if (sets.empty()) return {};
  const std::size_t num_classes = sets.front().num_classes();
  const std::size_t width = sets.front().width();
  for (const auto& s : sets) {
    if (s.width() != width || s.num_classes() != num_classes) {
      throw ShapeError("aggregate_global: prototype sets have incompatible shapes");
    }
  }
  PrototypeSet out(num_classes, width);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<double> sum(width, 0.0);
    std::size_t contributors = 0;
    for (const auto& s : sets) {
      if (!s.has(c)) continue;
      const auto& v = s.at(c);
      for (std::size_t i = 0; i < width; ++i) sum[i] += v[i];
      ++contributors;
    }
    if (contributors == 0) continue;
    for (double& v : sum) v /= static_cast<double>(contributors);
    out.set(c, std::move(sum));
  }
  return out;
}

double guarded_cosine(std::span<const double> a, std::span<const double> b) {
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  return dot / ((norm(a) + kCosineNormGuard) * (norm(b) + kCosineNormGuard));
}

std::vector<double> contrastive_loss_per_sample(const Tensor& features, std::span<const int> labels,
                                                const PrototypeSet& global, double tau) {
  check_contrast_inputs(features, labels, global, tau);
  std::vector<double> out(labels.size(), 0.0);
  if (global.empty()) return out;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (auto s = sample_scores(features.row(r), labels[r], global)) out[r] = sample_contrast(*s, tau);
  }
  return out;
}

double contrastive_loss(const Tensor& features, std::span<const int> labels, const PrototypeSet& global, double tau) {
  const auto per_sample = contrastive_loss_per_sample(features, labels, global, tau);
  if (per_sample.empty()) return 0.0;
  return std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / static_cast<double>(per_sample.size());
}

double taylor_ratio_diagnostic(const Tensor& features, std::span<const int> labels, const PrototypeSet& global,
                               double tau) {
  check_contrast_inputs(features, labels, global, tau);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    auto s = sample_scores(features.row(r), labels[r], global);
    if (!s) continue;
    const double pos = s->cos[s->positive];
    double ratio = 0.0;
    for (std::size_t k = 0; k < s->cos.size(); ++k) {
      if (k != s->positive) ratio += std::exp((s->cos[k] - pos) / tau);
    }
    total += ratio;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

namespace {

bool contrast_active(const FatccLossSpec& spec) {
  return spec.global.has_value() && !spec.global->empty() && spec.lambda != 0.0;
}

}  // namespace

double fatcc_local_loss(const ForwardTrace& trace, std::span<const int> labels, const FatccLossSpec& spec) {
  const double ce = spec.weights ? calibrated_ce(trace.logits(), *spec.weights, labels)
                                 : cross_entropy(trace.logits(), labels);
  if (!contrast_active(spec)) return ce;
  return ce + spec.lambda * contrastive_loss(trace.features(), labels, *spec.global, spec.tau);
}

double evaluate_loss(const ForwardTrace& trace, std::span<const int> labels, const LossSpec& spec) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PlainCE>) {
          return cross_entropy(trace.logits(), labels);
        } else if constexpr (std::is_same_v<T, CalibratedCE>) {
          return calibrated_ce(trace.logits(), s.weights, labels);
        } else {
          return fatcc_local_loss(trace, labels, s);
        }
      },
      spec);
}

LossAndGrad loss_and_output_grad(const ForwardTrace& trace, std::span<const int> labels, const LossSpec& spec) {
  const Tensor& logits = trace.logits();
  LossAndGrad out;
  out.loss = evaluate_loss(trace, labels, spec);  // also validates labels
  out.grad.d_logits = Tensor::matrix(logits.rows(), logits.cols());
  if (logits.rows() == 0) return out;

  const ClassWeights* weights = nullptr;
  const FatccLossSpec* fat = std::get_if<FatccLossSpec>(&spec);
  if (const auto* c = std::get_if<CalibratedCE>(&spec)) weights = &c->weights;
  if (fat && fat->weights) weights = &*fat->weights;

  if (weights) {
    ce_logit_grad(scale_logits(logits, *weights), labels, out.grad.d_logits);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto g = out.grad.d_logits.row(r);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= weights->w[j];
    }
  } else {
    ce_logit_grad(logits, labels, out.grad.d_logits);
  }

  if (fat && contrast_active(*fat)) {
    const Tensor& h = trace.features();
    out.grad.d_features = Tensor::matrix(h.rows(), h.cols());
    contrast_feature_grad(h, labels, *fat->global, fat->tau, fat->lambda, out.grad.d_features);
  }
  return out;
}

BackpropResult backprop(const ModelParams& params, const Tensor& input, std::span<const int> labels,
                        const LossSpec& spec) {
  const ForwardTrace trace = forward(params, input);
  LossAndGrad lg = loss_and_output_grad(trace, labels, spec);
  Gradients g = backward(params, trace, lg.grad);
  return {lg.loss, std::move(g.params), std::move(g.input)};
}

}  // namespace fatcc

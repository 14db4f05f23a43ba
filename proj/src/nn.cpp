#include "fatcc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fatcc/errors.hpp"

namespace fatcc {

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void ModelParams::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.weight.rank() != 2) throw ShapeError("layer " + std::to_string(k) + ": weight must be rank 2");
    if (l.bias.size() != l.out_dim()) {
      throw ShapeError("layer " + std::to_string(k) + ": bias length " + std::to_string(l.bias.size()) +
                       " != output dim " + std::to_string(l.out_dim()));
    }
    if (k > 0 && layers[k - 1].out_dim() != l.in_dim()) {
      throw ShapeError("layer " + std::to_string(k) + ": input dim " + std::to_string(l.in_dim()) +
                       " does not chain with previous output dim " + std::to_string(layers[k - 1].out_dim()));
    }
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.layers.reserve(layers.size());
  for (const auto& l : layers) {
    z.layers.push_back({Tensor(l.weight.shape()), std::vector<double>(l.bias.size(), 0.0)});
  }
  return z;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ModelParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("assign_flat: length mismatch");
  auto it = flat.begin();
  for (auto& l : layers) {
    std::copy_n(it, l.weight.size(), l.weight.data().begin());
    it += static_cast<std::ptrdiff_t>(l.weight.size());
    std::copy_n(it, l.bias.size(), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
}

void TrainConfig::validate() const {
  // zero is allowed and freezes the model
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning rate must be >= 0");
  if (batch_size < 1) throw DomainError("batch size must be >= 1");
  if (local_epochs < 1) throw DomainError("local epochs must be >= 1");
}

ModelParams init_mlp(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ShapeError("init_mlp needs at least input and output widths");
  std::mt19937_64 rng(seed);
  ModelParams p;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k], out = widths[k + 1];
    if (in == 0 || out == 0) throw ShapeError("init_mlp: zero layer width");
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-s, s);
    Layer l{Tensor::matrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : l.weight.data()) w = u(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

ForwardTrace forward(const ModelParams& params, const Tensor& input) {
  params.validate();
  if (input.cols() != params.input_dim()) {
    throw ShapeError("layer 0: input has " + std::to_string(input.cols()) + " features, expected " +
                     std::to_string(params.input_dim()));
  }
  const std::size_t n = input.rows();
  const std::size_t num_layers = params.layers.size();
  ForwardTrace t;
  t.pre.reserve(num_layers);
  t.act.reserve(num_layers);
  t.act.push_back(input.rank() == 2 ? input : Tensor({n, input.cols()}, input.data()));

  for (std::size_t k = 0; k < num_layers; ++k) {
    const Layer& l = params.layers[k];
    const Tensor& x = t.act.back();
    Tensor z = Tensor::matrix(n, l.out_dim());
    for (std::size_t r = 0; r < n; ++r) {
      auto xr = x.row(r);
      auto zr = z.row(r);
      for (std::size_t o = 0; o < l.out_dim(); ++o) {
        auto w = l.weight.row(o);
        double acc = l.bias[o];
        for (std::size_t i = 0; i < xr.size(); ++i) acc += w[i] * xr[i];
        zr[o] = acc;
      }
    }
    if (k + 1 < num_layers) {
      Tensor a = z;
      for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
      t.pre.push_back(std::move(z));
      t.act.push_back(std::move(a));
    } else {
      t.pre.push_back(std::move(z));
    }
  }
  return t;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch size");
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += std::log(s) - (z[static_cast<std::size_t>(y)] - m);
  }
  return total / static_cast<double>(n);
}

std::vector<int> predict(const ModelParams& params, const Tensor& input) {
  const ForwardTrace t = forward(params, input);
  const Tensor& z = t.logits();
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    // max_element returns the first maximum
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace, const OutputGrad& grad) {
  const std::size_t num_layers = params.layers.size();
  if (trace.pre.size() != num_layers) throw ShapeError("backward: trace does not match model depth");
  const std::size_t n = trace.input().rows();
  if (grad.d_logits.rows() != n || grad.d_logits.cols() != params.num_classes()) {
    throw ShapeError("backward: logit gradient has shape " + grad.d_logits.shape_string());
  }
  const bool has_feature_grad = grad.d_features.size() > 0;
  if (has_feature_grad && (grad.d_features.rows() != n || grad.d_features.cols() != params.feature_dim())) {
    throw ShapeError("backward: feature gradient has shape " + grad.d_features.shape_string());
  }

  Gradients g{params.zeros_like(), Tensor()};
  Tensor delta = grad.d_logits;  // dL/dpre[k]
  for (std::size_t k = num_layers; k-- > 0;) {
    const Layer& l = params.layers[k];
    const Tensor& x = trace.act[k];
    Layer& gl = g.params.layers[k];
    for (std::size_t r = 0; r < n; ++r) {
      auto dr = delta.row(r);
      auto xr = x.row(r);
      for (std::size_t o = 0; o < l.out_dim(); ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        gl.bias[o] += d;
        auto gw = gl.weight.row(o);
        for (std::size_t i = 0; i < xr.size(); ++i) gw[i] += d * xr[i];
      }
    }
    Tensor dx = Tensor::matrix(n, l.in_dim());
    for (std::size_t r = 0; r < n; ++r) {
      auto dr = delta.row(r);
      auto dxr = dx.row(r);
      for (std::size_t o = 0; o < l.out_dim(); ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        auto w = l.weight.row(o);
        for (std::size_t i = 0; i < dxr.size(); ++i) dxr[i] += d * w[i];
      }
    }
    if (k + 1 == num_layers && has_feature_grad) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += grad.d_features.data()[i];
    }
    if (k == 0) {
      g.input = std::move(dx);
    } else {
      const Tensor& z = trace.pre[k - 1];
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(z.data()[i] > 0.0)) dx.data()[i] = 0.0;
      }
      delta = std::move(dx);
    }
  }
  return g;
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grads, double learning_rate) {
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw DomainError("sgd_step: learning rate must be >= 0");
  if (grads.layers.size() != params.layers.size()) throw ShapeError("sgd_step: gradient depth mismatch");
  ModelParams out = params;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    Layer& l = out.layers[k];
    const Layer& g = grads.layers[k];
    if (g.weight.shape() != l.weight.shape() || g.bias.size() != l.bias.size()) {
      throw ShapeError("sgd_step: gradient shape mismatch at layer " + std::to_string(k));
    }
    for (std::size_t i = 0; i < l.weight.size(); ++i) l.weight.data()[i] -= learning_rate * g.weight.data()[i];
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= learning_rate * g.bias[i];
  }
  return out;
}

}  // namespace fatcc

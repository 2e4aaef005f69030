#pragma once

// Dense MLP on a flat parameter vector: forward pass, analytic backprop,
// softmax / cross-entropy / KL losses and plain SGD.
//
// Parameter layout, layer by layer: W_l (out x in, row-major) then b_l (out).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedadt/dataset.hpp"
#include "fedadt/error.hpp"
#include "fedadt/rng.hpp"

namespace fedadt {

using ParamVector = std::vector<double>;
using Logits = std::vector<double>;
using ProbDist = std::vector<double>;

enum class Activation { relu, tanh };

class ModelArch {
 public:
  explicit ModelArch(std::vector<std::size_t> layer_sizes, Activation act = Activation::relu)
      : sizes_(std::move(layer_sizes)), act_(act) {
    if (sizes_.size() < 2) throw InvalidInput("ModelArch: need at least input and output sizes");
    for (auto s : sizes_)
      if (s == 0) throw InvalidInput("ModelArch: layer sizes must be >= 1");
    offsets_.reserve(sizes_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(off);
      off += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    }
    offsets_.push_back(off);
  }

  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t class_count() const noexcept { return sizes_.back(); }
  std::size_t num_layers() const noexcept { return sizes_.size() - 1; }
  std::size_t param_count() const noexcept { return offsets_.back(); }
  Activation activation() const noexcept { return act_; }
  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }

  std::size_t fan_in(std::size_t layer) const { return sizes_[layer]; }
  std::size_t fan_out(std::size_t layer) const { return sizes_[layer + 1]; }
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer] * sizes_[layer + 1];
  }

  friend bool operator==(const ModelArch& a, const ModelArch& b) {
    return a.sizes_ == b.sizes_ && a.act_ == b.act_;
  }

 private:
  std::vector<std::size_t> sizes_;
  Activation act_;
  std::vector<std::size_t> offsets_;
};

// Loss value together with its gradient w.r.t. the logits.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

namespace detail {

inline void check_params(const ModelArch& arch, std::span<const double> w) {
  if (w.size() != arch.param_count())
    throw InvalidInput("parameter vector length " + std::to_string(w.size()) +
                       " does not match architecture (" + std::to_string(arch.param_count()) +
                       ")");
}

inline double activate(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation z and output h.
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

// Activations of every layer; acts[0] is the input, acts.back() the logits.
struct ForwardCache {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> acts;
};

inline void affine(const ModelArch& arch, std::span<const double> w, std::size_t layer,
                   std::span<const double> in, std::vector<double>& out) {
  const std::size_t n_in = arch.fan_in(layer);
  const std::size_t n_out = arch.fan_out(layer);
  const double* W = w.data() + arch.weight_offset(layer);
  const double* b = w.data() + arch.bias_offset(layer);
  out.assign(n_out, 0.0);
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = b[o];
    const double* row = W + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

inline void forward_cached(const ModelArch& arch, std::span<const double> w,
                           std::span<const double> x, ForwardCache& cache) {
  const std::size_t L = arch.num_layers();
  cache.pre.resize(L);
  cache.acts.resize(L + 1);
  cache.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < L; ++l) {
    affine(arch, w, l, cache.acts[l], cache.pre[l]);
    auto& h = cache.acts[l + 1];
    h = cache.pre[l];
    if (l + 1 < L)
      for (auto& v : h) v = activate(arch.activation(), v);
  }
}

// Adds d(loss)/d(params) to grad, given d(loss)/d(logits) for the cached sample.
inline void backprop(const ModelArch& arch, std::span<const double> w, const ForwardCache& cache,
                     std::span<const double> dlogits, std::span<double> grad, double scale) {
  std::vector<double> delta(dlogits.begin(), dlogits.end());
  std::vector<double> prev;
  for (std::size_t l = arch.num_layers(); l-- > 0;) {
    const std::size_t n_in = arch.fan_in(l);
    const std::size_t n_out = arch.fan_out(l);
    const double* W = w.data() + arch.weight_offset(l);
    double* gW = grad.data() + arch.weight_offset(l);
    double* gb = grad.data() + arch.bias_offset(l);
    const auto& in = cache.acts[l];
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = scale * delta[o];
      gb[o] += d;
      double* grow = gW + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) grow[i] += d * in[i];
    }
    if (l == 0) break;
    prev.assign(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* row = W + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) prev[i] += row[i] * delta[o];
    }
    const auto& z = cache.pre[l - 1];
    const auto& h = cache.acts[l];
    for (std::size_t i = 0; i < n_in; ++i)
      prev[i] *= activate_grad(arch.activation(), z[i], h[i]);
    delta.swap(prev);
  }
}

inline double log_sum_exp(std::span<const double> z, double inv_t = 1.0) {
  const double m = *std::max_element(z.begin(), z.end()) * inv_t;
  double s = 0.0;
  for (double v : z) s += std::exp(v * inv_t - m);
  return m + std::log(s);
}

}  // namespace detail

inline Logits forward(const ModelArch& arch, std::span<const double> w,
                      std::span<const double> x) {
  detail::check_params(arch, w);
  if (x.size() != arch.input_dim())
    throw InvalidInput("forward: input length " + std::to_string(x.size()) + " != " +
                       std::to_string(arch.input_dim()));
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    detail::affine(arch, w, l, cur, next);
    if (l + 1 < arch.num_layers())
      for (auto& v : next) v = detail::activate(arch.activation(), v);
    cur.swap(next);
  }
  return cur;
}

// He-uniform weights for relu, Glorot-uniform for tanh; zero biases.
inline ParamVector init_params(const ModelArch& arch, std::uint64_t seed) {
  ParamVector w(arch.param_count(), 0.0);
  auto rng = make_stream(seed, StreamTag::init);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const double fan_in = static_cast<double>(arch.fan_in(l));
    const double fan_out = static_cast<double>(arch.fan_out(l));
    const double limit = arch.activation() == Activation::relu
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t n = arch.fan_in(l) * arch.fan_out(l);
    for (std::size_t k = 0; k < n; ++k) w[arch.weight_offset(l) + k] = dist(rng);
  }
  return w;
}

// Temperature-scaled softmax with max-subtraction.
inline ProbDist softmax_t(std::span<const double> z, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw InvalidParameter("softmax: temperature must be > 0");
  if (z.empty()) throw InvalidInput("softmax: empty logits");
  const double inv_t = 1.0 / temperature;
  const double m = *std::max_element(z.begin(), z.end());
  ProbDist p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - m) * inv_t);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

// -log softmax(z)[label]; gradient softmax(z) - onehot(label).
inline LossGrad cross_entropy(std::span<const double> z, std::size_t label) {
  if (label >= z.size())
    throw InvalidInput("cross_entropy: label " + std::to_string(label) + " out of range");
  LossGrad out;
  out.loss = detail::log_sum_exp(z) - z[label];
  out.grad = softmax_t(z, 1.0);
  out.grad[label] -= 1.0;
  return out;
}

inline constexpr double kKlFloor = 1e-12;

// KL(p || q) = sum p log(p / q); zero-mass entries of p contribute nothing.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidInput("kl_div: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  }
  return std::max(s, 0.0);
}

inline void sgd_update(ParamVector& w, std::span<const double> grad, double lr) {
  if (w.size() != grad.size()) throw InvalidInput("sgd: length mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
}

inline ParamVector sgd_step(ParamVector w, std::span<const double> grad, double lr) {
  sgd_update(w, grad, lr);
  return w;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> z) {
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

// Mean-loss gradient over a minibatch. loss_fn(logits, sample_index) -> LossGrad.
// Samples are reduced in the order given, so results are reproducible.
template <class LossFn>
double batch_gradient(const ModelArch& arch, std::span<const double> w, const Dataset& ds,
                      std::span<const std::size_t> batch, LossFn&& loss_fn, ParamVector& grad) {
  detail::check_params(arch, w);
  if (batch.empty()) throw InvalidInput("batch_gradient: empty batch");
  grad.assign(arch.param_count(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  detail::ForwardCache cache;
  double total = 0.0;
  for (std::size_t idx : batch) {
    detail::forward_cached(arch, w, ds.row(idx), cache);
    LossGrad lg = loss_fn(static_cast<const Logits&>(cache.acts.back()), idx);
    total += lg.loss;
    detail::backprop(arch, w, cache, lg.grad, grad, scale);
  }
  return total * scale;
}

inline Evaluation evaluate(const ModelArch& arch, std::span<const double> w, const Dataset& ds,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInput("evaluate: empty slice");
  if (ds.dim() != arch.input_dim()) throw InvalidInput("evaluate: dataset/arch dim mismatch");
  if (ds.class_count() > arch.class_count())
    throw InvalidInput("evaluate: dataset has more classes than the model outputs");
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t idx : indices) {
    const Logits z = forward(arch, w, ds.row(idx));
    if (argmax(z) == ds.label(idx)) ++correct;
    loss += detail::log_sum_exp(z) - z[ds.label(idx)];
  }
  const double n = static_cast<double>(indices.size());
  return {static_cast<double>(correct) / n, loss / n};
}

inline bool all_finite(std::span<const double> w) {
  return std::all_of(w.begin(), w.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace fedadt

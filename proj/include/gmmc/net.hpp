// Fully-connected feature extractor with hand-rolled reverse-mode gradients.
//
// The network is a plain MLP: layer l computes act(W_l a_{l-1} + b_l).
// Parameters live in one flat vector so the optimizer and checkpoint code can
// treat them uniformly; param_layout describes where each layer's weight
// block (row-major) and bias block sit inside it.
//
// Both gradient entry points take an "upstream" vector u of length d (the
// feature dimension) and return J^T u, either with respect to the parameters
// or with respect to the input. Callers assemble u so that one backward pass
// covers whatever scalar loss they differentiate.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/vecops.hpp"

namespace gmmc {

enum class Activation : int { Tanh = 0, ReLU = 1, Identity = 2 };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
  }
  throw std::invalid_argument("activation_name: unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("activation_from_name: unknown activation '" + s + "'");
}

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> widths;            // per layer, last entry is the feature dim d
  std::vector<Activation> activations;  // per layer, parallel to widths
};

inline void validate_spec(const NetworkSpec& spec) {
  if (spec.input_dim < 1) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
  if (spec.widths.empty()) throw std::invalid_argument("NetworkSpec: at least one layer required");
  for (int w : spec.widths)
    if (w < 1) throw std::invalid_argument("NetworkSpec: layer widths must be positive");
  if (spec.activations.size() != spec.widths.size())
    throw std::invalid_argument("NetworkSpec: one activation per layer required");
}

inline int feature_dim(const NetworkSpec& spec) { return spec.widths.back(); }

struct LayerLayout {
  int fan_in = 0;
  int fan_out = 0;
  std::size_t w_off = 0;  // row-major fan_out x fan_in block
  std::size_t b_off = 0;
};

inline std::vector<LayerLayout> param_layout(const NetworkSpec& spec) {
  std::vector<LayerLayout> out;
  out.reserve(spec.widths.size());
  std::size_t off = 0;
  int prev = spec.input_dim;
  for (int w : spec.widths) {
    LayerLayout l;
    l.fan_in = prev;
    l.fan_out = w;
    l.w_off = off;
    l.b_off = off + static_cast<std::size_t>(prev) * static_cast<std::size_t>(w);
    off = l.b_off + static_cast<std::size_t>(w);
    prev = w;
    out.push_back(l);
  }
  return out;
}

inline std::size_t param_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  int prev = spec.input_dim;
  for (int w : spec.widths) {
    n += static_cast<std::size_t>(prev) * static_cast<std::size_t>(w) + static_cast<std::size_t>(w);
    prev = w;
  }
  return n;
}

using ParameterVector = Vec;

// Xavier-uniform weights, zero biases. Draw order is fixed: layers in order,
// each layer's weights row-major; biases consume no draws.
inline ParameterVector init_params(const NetworkSpec& spec, Rng& rng) {
  validate_spec(spec);
  ParameterVector p(param_count(spec), 0.0);
  const auto layout = param_layout(spec);
  for (const auto& l : layout) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t nw = static_cast<std::size_t>(l.fan_in) * static_cast<std::size_t>(l.fan_out);
    for (std::size_t i = 0; i < nw; ++i) p[l.w_off + i] = dist(rng);
  }
  return p;
}

inline double act_apply(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Identity: return z;
  }
  return z;
}

// Derivative in terms of pre-activation z and output y = act(z).
// ReLU uses the z > 0 convention, so the derivative at exactly 0 is 0.
inline double act_deriv(Activation a, double z, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// Cached forward pass. acts[0] is the input copy, acts[l+1] the output of
// layer l; pre[l] is layer l's pre-activation. Buffers are reused across
// calls when the caller keeps the trace object alive.
struct ForwardTrace {
  std::vector<Vec> acts;
  std::vector<Vec> pre;
};

inline void forward_trace(const NetworkSpec& spec, const ParameterVector& params, const Vec& x,
                          ForwardTrace& trace) {
  if (static_cast<int>(x.size()) != spec.input_dim)
    throw std::invalid_argument("forward_trace: input dimension mismatch");
  if (params.size() != param_count(spec))
    throw std::invalid_argument("forward_trace: parameter count mismatch");
  const std::size_t L = spec.widths.size();
  trace.acts.resize(L + 1);
  trace.pre.resize(L);
  trace.acts[0] = x;
  const auto layout = param_layout(spec);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& lay = layout[l];
    const Vec& in = trace.acts[l];
    Vec& z = trace.pre[l];
    z.assign(static_cast<std::size_t>(lay.fan_out), 0.0);
    for (int r = 0; r < lay.fan_out; ++r) {
      const double* wrow = &params[lay.w_off + static_cast<std::size_t>(r) * static_cast<std::size_t>(lay.fan_in)];
      double s = params[lay.b_off + static_cast<std::size_t>(r)];
      for (int c = 0; c < lay.fan_in; ++c) s += wrow[c] * in[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = s;
    }
    Vec& out = trace.acts[l + 1];
    out.resize(static_cast<std::size_t>(lay.fan_out));
    const Activation a = spec.activations[l];
    for (int r = 0; r < lay.fan_out; ++r)
      out[static_cast<std::size_t>(r)] = act_apply(a, z[static_cast<std::size_t>(r)]);
  }
}

inline Vec forward(const NetworkSpec& spec, const ParameterVector& params, const Vec& x) {
  ForwardTrace t;
  forward_trace(spec, params, x, t);
  return t.acts.back();
}

namespace detail {

// Shared delta recursion. When param_grad is non-null, coeff * J_params^T u is
// accumulated into it; when input_grad is non-null, J_input^T u is written.
inline void backprop(const NetworkSpec& spec, const ParameterVector& params,
                     const ForwardTrace& trace, const Vec& upstream, double coeff,
                     ParameterVector* param_grad, Vec* input_grad) {
  const std::size_t L = spec.widths.size();
  if (static_cast<int>(upstream.size()) != spec.widths.back())
    throw std::invalid_argument("backprop: upstream dimension mismatch");
  if (trace.acts.size() != L + 1 || trace.pre.size() != L)
    throw std::invalid_argument("backprop: trace does not match spec");
  if (param_grad && param_grad->size() != param_count(spec))
    throw std::invalid_argument("backprop: gradient buffer size mismatch");
  const auto layout = param_layout(spec);

  // Delta for the output layer: its activation derivative applies directly.
  Vec delta(upstream.size());
  {
    const Activation a = spec.activations[L - 1];
    const Vec& z = trace.pre[L - 1];
    const Vec& y = trace.acts[L];
    for (std::size_t r = 0; r < delta.size(); ++r)
      delta[r] = upstream[r] * act_deriv(a, z[r], y[r]);
  }

  Vec next;
  for (std::size_t l = L; l-- > 0;) {
    const auto& lay = layout[l];
    const Vec& in = trace.acts[l];
    if (param_grad) {
      for (int r = 0; r < lay.fan_out; ++r) {
        const double dr = coeff * delta[static_cast<std::size_t>(r)];
        double* grow = &(*param_grad)[lay.w_off + static_cast<std::size_t>(r) * static_cast<std::size_t>(lay.fan_in)];
        for (int c = 0; c < lay.fan_in; ++c) grow[c] += dr * in[static_cast<std::size_t>(c)];
        (*param_grad)[lay.b_off + static_cast<std::size_t>(r)] += dr;
      }
    }
    const bool need_back = l > 0 || input_grad != nullptr;
    if (!need_back) break;
    next.assign(static_cast<std::size_t>(lay.fan_in), 0.0);
    for (int r = 0; r < lay.fan_out; ++r) {
      const double dr = delta[static_cast<std::size_t>(r)];
      if (dr == 0.0) continue;
      const double* wrow = &params[lay.w_off + static_cast<std::size_t>(r) * static_cast<std::size_t>(lay.fan_in)];
      for (int c = 0; c < lay.fan_in; ++c) next[static_cast<std::size_t>(c)] += wrow[c] * dr;
    }
    if (l > 0) {
      const Activation a = spec.activations[l - 1];
      const Vec& z = trace.pre[l - 1];
      const Vec& y = trace.acts[l];
      for (std::size_t c = 0; c < next.size(); ++c) next[c] *= act_deriv(a, z[c], y[c]);
    }
    delta.swap(next);
  }
  if (input_grad) *input_grad = delta;
}

}  // namespace detail

inline void accumulate_grad_params(const NetworkSpec& spec, const ParameterVector& params,
                                   const ForwardTrace& trace, const Vec& upstream, double coeff,
                                   ParameterVector& grad) {
  detail::backprop(spec, params, trace, upstream, coeff, &grad, nullptr);
}

inline ParameterVector grad_params(const NetworkSpec& spec, const ParameterVector& params,
                                   const ForwardTrace& trace, const Vec& upstream) {
  ParameterVector g(param_count(spec), 0.0);
  detail::backprop(spec, params, trace, upstream, 1.0, &g, nullptr);
  return g;
}

inline Vec grad_input(const NetworkSpec& spec, const ParameterVector& params,
                      const ForwardTrace& trace, const Vec& upstream) {
  Vec g;
  detail::backprop(spec, params, trace, upstream, 1.0, nullptr, &g);
  return g;
}

}  // namespace gmmc

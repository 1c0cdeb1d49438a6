// Short-run sampling of model inputs, plus the persistent replay buffer that
// amortizes chains across training steps.
//
// Three update rules are provided. The staged rule draws one feature-space
// target z ~ N(mu_y, gamma^2 I) up front and descends 0.5 ||phi(x) - z||^2
// without further noise. The noise-injected rule redraws z ~ N(0, I) every
// step and folds it into a single backward pass. The Langevin rule follows
// the energy gradient with additive input-space noise. Step primitives take
// the noise explicitly so every rule can be pinned down in tests; the chain
// runners own the random draws.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/model.hpp"
#include "gmmc/vecops.hpp"

namespace gmmc {

enum class SamplerMode { Staged, NoiseInjected, Sgld };

inline std::string sampler_mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::Staged: return "staged";
    case SamplerMode::NoiseInjected: return "noise_injected";
    case SamplerMode::Sgld: return "sgld";
  }
  throw std::invalid_argument("sampler_mode_name: unknown mode");
}

inline SamplerMode sampler_mode_from_name(const std::string& s) {
  if (s == "staged") return SamplerMode::Staged;
  if (s == "noise_injected") return SamplerMode::NoiseInjected;
  if (s == "sgld") return SamplerMode::Sgld;
  throw std::invalid_argument("sampler_mode_from_name: unknown mode '" + s + "'");
}

struct SamplerConfig {
  SamplerMode mode = SamplerMode::Staged;
  int steps = 20;          // chain length tau
  double step_size = 1.0;  // alpha
  double gamma2 = 1.0;     // variance of the staged target draw / noise scale
  bool clip = true;        // clamp iterates to [-1,1] after every step
};

inline void validate_sampler_config(const SamplerConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (!(cfg.step_size > 0.0)) throw std::invalid_argument("sampler: step_size must be positive");
  if (!(cfg.gamma2 > 0.0)) throw std::invalid_argument("sampler: gamma2 must be positive");
}

struct DivergedChainError : std::runtime_error {
  int step;
  explicit DivergedChainError(int step_)
      : std::runtime_error("chain diverged at step " + std::to_string(step_)), step(step_) {}
};

// Persistent reservoir of past chain endpoints. Reinitialization happens with
// probability reinit_prob per chain; otherwise a uniformly chosen stored
// state continues. All buffer decisions consume this buffer's own rng.
struct ReplayBuffer {
  std::size_t capacity = 0;
  double reinit_prob = 0.0;
  int input_dim = 0;
  std::uint64_t rng_seed = 0;
  std::vector<Vec> xs;
  std::vector<int> labels;
  Rng rng;

  std::size_t size() const { return xs.size(); }
};

inline ReplayBuffer make_replay_buffer(std::size_t capacity, int input_dim, double reinit_prob,
                                       std::uint64_t seed) {
  if (capacity < 1) throw std::invalid_argument("replay buffer: capacity must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("replay buffer: input_dim must be >= 1");
  if (!(reinit_prob >= 0.0) || !(reinit_prob <= 1.0))
    throw std::invalid_argument("replay buffer: reinit_prob must lie in [0,1]");
  ReplayBuffer buf;
  buf.capacity = capacity;
  buf.reinit_prob = reinit_prob;
  buf.input_dim = input_dim;
  buf.rng_seed = seed;
  buf.rng.seed(seed);
  return buf;
}

struct ChainStart {
  Vec x0;
  int label = 0;
  bool from_buffer = false;
  std::size_t slot = 0;
};

// Draw order: one uniform for the reinit decision (consumed even when the
// buffer is empty), then either one slot index, or input_dim box coordinates
// followed by one label.
inline ChainStart init_chain(ReplayBuffer& buf, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("init_chain: num_classes must be positive");
  const double u = uniform01(buf.rng);
  ChainStart st;
  if (!buf.xs.empty() && u >= buf.reinit_prob) {
    std::uniform_int_distribution<std::size_t> pick(0, buf.xs.size() - 1);
    st.slot = pick(buf.rng);
    st.x0 = buf.xs[st.slot];
    st.label = buf.labels[st.slot];
    st.from_buffer = true;
    return st;
  }
  st.x0.resize(static_cast<std::size_t>(buf.input_dim));
  std::uniform_real_distribution<double> box(-1.0, 1.0);
  for (double& v : st.x0) v = box(buf.rng);
  std::uniform_int_distribution<int> lab(1, num_classes);
  st.label = lab(buf.rng);
  st.from_buffer = false;
  return st;
}

// Stores a finished chain endpoint (clamped to the box). Continued chains
// overwrite their source slot; fresh chains append until capacity, then
// evict a uniformly random slot.
inline void buffer_put(ReplayBuffer& buf, Vec x, int label, const ChainStart& origin) {
  if (static_cast<int>(x.size()) != buf.input_dim)
    throw std::invalid_argument("buffer_put: dimension mismatch");
  clamp_box(x, -1.0, 1.0);
  if (origin.from_buffer) {
    buf.xs[origin.slot] = std::move(x);
    buf.labels[origin.slot] = label;
    return;
  }
  if (buf.xs.size() < buf.capacity) {
    buf.xs.push_back(std::move(x));
    buf.labels.push_back(label);
    return;
  }
  std::uniform_int_distribution<std::size_t> pick(0, buf.capacity - 1);
  const std::size_t k = pick(buf.rng);
  buf.xs[k] = std::move(x);
  buf.labels[k] = label;
}

// One staged descent step on 0.5 ||phi(x) - z||^2 with a fixed target z.
inline Vec staged_step(const GmmcModel& m, const Vec& x, const Vec& z, double alpha) {
  ForwardTrace trace;
  forward_trace(m.spec, m.params, x, trace);
  const Vec& phi = trace.acts.back();
  Vec upstream(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j) upstream[j] = phi[j] - z[j];
  const Vec g = grad_input(m.spec, m.params, trace, upstream);
  Vec out = x;
  axpy(-alpha, g, out);
  return out;
}

// One step of x <- x - alpha dE/dx + alpha (1/gamma) J^T z with fresh
// feature noise z; both terms share one backward pass through the upstream
// (phi - mu)/gamma^2 - z/gamma.
inline Vec noise_injected_step(const GmmcModel& m, const Vec& x, int label, const Vec& z,
                               double gamma2, double alpha) {
  const double gamma = std::sqrt(gamma2);
  ForwardTrace trace;
  forward_trace(m.spec, m.params, x, trace);
  const Vec& phi = trace.acts.back();
  const Vec& mu = m.centroids.mean_of(label);
  Vec upstream(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j)
    upstream[j] = (phi[j] - mu[j]) / gamma2 - z[j] / gamma;
  const Vec g = grad_input(m.spec, m.params, trace, upstream);
  Vec out = x;
  axpy(-alpha, g, out);
  return out;
}

// One Langevin step x <- x - (alpha/2) dE/dx + alpha eps with input noise.
inline Vec sgld_step(const GmmcModel& m, const Vec& x, int label, const Vec& eps, double gamma2,
                     double alpha) {
  ForwardTrace trace;
  forward_trace(m.spec, m.params, x, trace);
  const Vec& phi = trace.acts.back();
  const Vec& mu = m.centroids.mean_of(label);
  Vec upstream(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j) upstream[j] = (phi[j] - mu[j]) / gamma2;
  const Vec g = grad_input(m.spec, m.params, trace, upstream);
  Vec out = x;
  axpy(-alpha / 2.0, g, out);
  axpy(alpha, eps, out);
  return out;
}

struct ChainTrace {
  Vec target_z;  // staged mode only
  std::vector<Vec> pre_clip;
  std::vector<Vec> post_clip;
};

// Runs one chain of cfg.steps updates from x0 toward class `label`.
// Noise draws come from rng in a fixed order: staged draws feature_dim
// normals once up front; noise_injected draws feature_dim normals per step;
// sgld draws input_dim normals per step. A non-finite iterate (checked
// before clipping) raises DivergedChainError with the 1-based step index.
inline Vec run_chain(const GmmcModel& m, const Vec& x0, int label, const SamplerConfig& cfg,
                     Rng& rng, ChainTrace* trace = nullptr) {
  const int d = feature_dim(m.spec);
  const Vec& mu = m.centroids.mean_of(label);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z;
  if (cfg.mode == SamplerMode::Staged) {
    const double sd = std::sqrt(cfg.gamma2);
    z.resize(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) z[static_cast<std::size_t>(j)] = mu[static_cast<std::size_t>(j)] + sd * normal(rng);
    if (trace) trace->target_z = z;
  }
  Vec x = x0;
  for (int t = 1; t <= cfg.steps; ++t) {
    Vec next;
    switch (cfg.mode) {
      case SamplerMode::Staged:
        next = staged_step(m, x, z, cfg.step_size);
        break;
      case SamplerMode::NoiseInjected: {
        Vec zt(static_cast<std::size_t>(d));
        for (double& v : zt) v = normal(rng);
        next = noise_injected_step(m, x, label, zt, cfg.gamma2, cfg.step_size);
        break;
      }
      case SamplerMode::Sgld: {
        Vec eps(x.size());
        for (double& v : eps) v = normal(rng);
        next = sgld_step(m, x, label, eps, cfg.gamma2, cfg.step_size);
        break;
      }
    }
    if (!all_finite(next)) throw DivergedChainError(t);
    if (trace) trace->pre_clip.push_back(next);
    if (cfg.clip) clamp_box(next, -1.0, 1.0);
    if (trace) trace->post_clip.push_back(next);
    x = std::move(next);
  }
  return x;
}

}  // namespace gmmc

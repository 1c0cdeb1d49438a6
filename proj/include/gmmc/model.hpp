// The classifier: a feature extractor phi plus fixed centroids mu_1..mu_C.
//
// Energy of a pair (x, y) is ||phi(x) - mu_y||^2 / (2 gamma^2). During
// training gamma^2 is pinned to 1 (any other constant only rescales the
// learning rate); after training it is estimated from data and drives the
// posterior, the density surrogate and everything downstream that needs a
// calibrated scale. Class labels are 1-based everywhere.
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "gmmc/centroids.hpp"
#include "gmmc/data.hpp"
#include "gmmc/net.hpp"
#include "gmmc/vecops.hpp"

namespace gmmc {

enum class Gamma2Mode { Unit, Estimated };

struct GmmcModel {
  NetworkSpec spec;
  ParameterVector params;
  CentroidSet centroids;
  std::optional<double> gamma2;  // set by estimate_gamma2 after training
};

inline void validate_model(const GmmcModel& m) {
  validate_spec(m.spec);
  if (feature_dim(m.spec) != m.centroids.feature_dim)
    throw std::invalid_argument("model: network feature dim does not match centroid dim");
  if (m.params.size() != param_count(m.spec))
    throw std::invalid_argument("model: parameter count mismatch");
  if (m.gamma2 && !(*m.gamma2 > 0.0))
    throw std::invalid_argument("model: gamma2 must be positive when set");
}

inline GmmcModel make_model(const NetworkSpec& spec, const CentroidSet& centroids,
                            std::uint64_t init_seed) {
  GmmcModel m;
  m.spec = spec;
  m.centroids = centroids;
  Rng rng(init_seed);
  m.params = init_params(spec, rng);
  validate_model(m);
  return m;
}

inline double resolve_gamma2(const GmmcModel& m, Gamma2Mode mode) {
  if (mode == Gamma2Mode::Unit) return 1.0;
  if (!m.gamma2) throw std::logic_error("model: gamma2 requested before estimation");
  return *m.gamma2;
}

inline Vec feature(const GmmcModel& m, const Vec& x) { return forward(m.spec, m.params, x); }

// Squared feature distances to every centroid, given precomputed features.
inline Vec class_sq_dists(const GmmcModel& m, const Vec& phi) {
  Vec d(static_cast<std::size_t>(m.centroids.num_classes));
  for (int k = 1; k <= m.centroids.num_classes; ++k)
    d[static_cast<std::size_t>(k - 1)] = sq_dist(phi, m.centroids.mean_of(k));
  return d;
}

inline double energy(const GmmcModel& m, const Vec& x, int label,
                     Gamma2Mode mode = Gamma2Mode::Unit) {
  const double g2 = resolve_gamma2(m, mode);
  const Vec phi = feature(m, x);
  return sq_dist(phi, m.centroids.mean_of(label)) / (2.0 * g2);
}

// Softmax over negated energies, computed max-shifted. Entries are positive
// and sum to 1 up to rounding.
inline Vec posterior(const GmmcModel& m, const Vec& x, Gamma2Mode mode = Gamma2Mode::Estimated) {
  const double g2 = resolve_gamma2(m, mode);
  const Vec d = class_sq_dists(m, feature(m, x));
  Vec logits(d.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < d.size(); ++k) {
    logits[k] = -d[k] / (2.0 * g2);
    mx = std::max(mx, logits[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    logits[k] = std::exp(logits[k] - mx);
    z += logits[k];
  }
  for (double& p : logits) p /= z;
  return logits;
}

// Argmin of feature distance; gamma^2 cancels, so no estimate is needed.
// Exact ties resolve to the lowest label.
inline int classify(const GmmcModel& m, const Vec& x) {
  return nearest_centroid(m.centroids, feature(m, x));
}

inline double accuracy(const GmmcModel& m, const LabeledDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (classify(m, ds.xs[i]) == ds.labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

// Per-dimension average of the squared residual to the true-class centroid:
// gamma^2 = (1/d) * mean_i ||phi(x_i) - mu_{y_i}||^2.
inline double estimate_gamma2(const GmmcModel& m, const LabeledDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("estimate_gamma2: empty dataset");
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vec phi = feature(m, ds.xs[i]);
    acc += sq_dist(phi, m.centroids.mean_of(ds.labels[i]));
  }
  const double g2 = acc / (static_cast<double>(ds.size()) * feature_dim(m.spec));
  if (!(g2 > 0.0) || !std::isfinite(g2))
    throw std::runtime_error("estimate_gamma2: degenerate estimate");
  return g2;
}

// Unnormalized log density log sum_y exp(-E(x,y)), max-shifted. Higher means
// more in-distribution.
inline double logpx_score(const GmmcModel& m, const Vec& x) {
  const double g2 = resolve_gamma2(m, Gamma2Mode::Estimated);
  const Vec d = class_sq_dists(m, feature(m, x));
  double emin = d[0];
  for (double v : d) emin = std::min(emin, v);
  double s = 0.0;
  for (double v : d) s += std::exp((emin - v) / (2.0 * g2));
  return -emin / (2.0 * g2) + std::log(s);
}

// Negated norm of the input gradient of log p(x); one backward pass with the
// posterior-weighted residual as upstream. Always <= 0.
inline double approx_mass_score(const GmmcModel& m, const Vec& x) {
  const double g2 = resolve_gamma2(m, Gamma2Mode::Estimated);
  ForwardTrace trace;
  forward_trace(m.spec, m.params, x, trace);
  const Vec& phi = trace.acts.back();
  const Vec d = class_sq_dists(m, phi);
  Vec logits(d.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < d.size(); ++k) {
    logits[k] = -d[k] / (2.0 * g2);
    mx = std::max(mx, logits[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    logits[k] = std::exp(logits[k] - mx);
    z += logits[k];
  }
  Vec upstream(phi.size(), 0.0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double pk = logits[k] / z;
    const Vec& mu = m.centroids.means[k];
    for (std::size_t j = 0; j < phi.size(); ++j) upstream[j] += pk * (phi[j] - mu[j]) / g2;
  }
  const Vec g = grad_input(m.spec, m.params, trace, upstream);
  return -norm2(g);
}

// Largest posterior probability; strictly below 1 for finite energies.
inline double predictive_score(const GmmcModel& m, const Vec& x) {
  const Vec p = posterior(m, x, Gamma2Mode::Estimated);
  double mx = 0.0;
  for (double v : p) mx = std::max(mx, v);
  return mx;
}

}  // namespace gmmc

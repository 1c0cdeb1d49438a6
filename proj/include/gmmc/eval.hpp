// Evaluation: calibration, out-of-distribution scoring and input-space
// attacks. Everything here consumes a trained model with an estimated
// gamma^2 (classification accuracy alone does not need it, attacks and
// posteriors do).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/data.hpp"
#include "gmmc/model.hpp"
#include "gmmc/vecops.hpp"

namespace gmmc {

struct CalibrationBucket {
  std::size_t count = 0;
  double mean_conf = 0.0;
  double mean_acc = 0.0;
};

struct CalibrationResult {
  double ece = 0.0;
  std::vector<CalibrationBucket> buckets;
};

// Expected calibration error over M equal-width confidence buckets
// [(m-1)/M, m/M), the last one closed at 1. ECE is the count-weighted mean
// absolute gap between bucket accuracy and bucket confidence.
inline CalibrationResult calibration(const std::vector<double>& confidence,
                                     const std::vector<bool>& correct, int buckets) {
  if (buckets < 1) throw std::invalid_argument("calibration: buckets must be >= 1");
  if (confidence.empty() || confidence.size() != correct.size())
    throw std::invalid_argument("calibration: inputs empty or of unequal length");
  const std::size_t M = static_cast<std::size_t>(buckets);
  std::vector<std::size_t> count(M, 0);
  std::vector<double> conf_sum(M, 0.0), acc_sum(M, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0) || !(c <= 1.0))
      throw std::invalid_argument("calibration: confidence outside [0,1]");
    std::size_t b = static_cast<std::size_t>(c * static_cast<double>(M));
    if (b >= M) b = M - 1;
    count[b] += 1;
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  CalibrationResult res;
  res.buckets.resize(M);
  const double n = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < M; ++b) {
    res.buckets[b].count = count[b];
    if (count[b] == 0) continue;
    res.buckets[b].mean_conf = conf_sum[b] / static_cast<double>(count[b]);
    res.buckets[b].mean_acc = acc_sum[b] / static_cast<double>(count[b]);
    res.ece += (static_cast<double>(count[b]) / n) *
               std::fabs(res.buckets[b].mean_acc - res.buckets[b].mean_conf);
  }
  return res;
}

inline double expected_calibration_error(const std::vector<double>& confidence,
                                         const std::vector<bool>& correct, int buckets) {
  return calibration(confidence, correct, buckets).ece;
}

// Probability that a uniformly drawn in-distribution score exceeds a
// uniformly drawn out score, counting ties as one half (the Mann-Whitney
// statistic). Computed by sorting, so large inputs stay cheap.
inline double auroc(const std::vector<double>& in_scores, const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty())
    throw std::invalid_argument("auroc: both score sets must be non-empty");
  std::vector<double> ins = in_scores, outs = out_scores;
  std::sort(ins.begin(), ins.end());
  std::sort(outs.begin(), outs.end());
  double wins = 0.0;
  std::size_t below = 0, equal = 0, j = 0;
  for (const double s : ins) {
    while (j < outs.size() && outs[j] < s) ++j;
    below = j;
    std::size_t k = j;
    while (k < outs.size() && outs[k] == s) ++k;
    equal = k - j;
    wins += static_cast<double>(below) + 0.5 * static_cast<double>(equal);
  }
  return wins / (static_cast<double>(ins.size()) * static_cast<double>(outs.size()));
}

// Confidence = maximum posterior, correctness = nearest-centroid prediction.
inline CalibrationResult model_calibration(const GmmcModel& m, const LabeledDataset& ds,
                                           int buckets) {
  if (ds.size() == 0) throw std::invalid_argument("model_calibration: empty dataset");
  std::vector<double> conf(ds.size());
  std::vector<bool> correct(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    conf[i] = predictive_score(m, ds.xs[i]);
    correct[i] = classify(m, ds.xs[i]) == ds.labels[i];
  }
  return calibration(conf, correct, buckets);
}

struct OodHistogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> in_counts, out_counts;
};

struct OodScoreResult {
  std::string name;
  std::vector<double> in_scores, out_scores;
  double auroc = 0.0;
  OodHistogram hist;
};

struct OodResult {
  std::vector<OodScoreResult> scores;  // logpx, approx_mass, predictive
};

namespace detail {

inline OodHistogram score_histogram(const std::vector<double>& in_scores,
                                    const std::vector<double>& out_scores, int bins) {
  OodHistogram h;
  h.lo = std::numeric_limits<double>::infinity();
  h.hi = -h.lo;
  for (double s : in_scores) {
    h.lo = std::min(h.lo, s);
    h.hi = std::max(h.hi, s);
  }
  for (double s : out_scores) {
    h.lo = std::min(h.lo, s);
    h.hi = std::max(h.hi, s);
  }
  h.in_counts.assign(static_cast<std::size_t>(bins), 0);
  h.out_counts.assign(static_cast<std::size_t>(bins), 0);
  const double w = (h.hi - h.lo) / static_cast<double>(bins);
  auto bucket = [&](double s) -> std::size_t {
    if (!(w > 0.0)) return 0;
    std::size_t b = static_cast<std::size_t>((s - h.lo) / w);
    if (b >= static_cast<std::size_t>(bins)) b = static_cast<std::size_t>(bins) - 1;
    return b;
  };
  for (double s : in_scores) h.in_counts[bucket(s)] += 1;
  for (double s : out_scores) h.out_counts[bucket(s)] += 1;
  return h;
}

}  // namespace detail

// Scores both datasets under all three detectors. Higher always means more
// in-distribution, so AUROC well above 0.5 is the desired direction.
inline OodResult ood_evaluate(const GmmcModel& m, const LabeledDataset& in_ds,
                              const LabeledDataset& out_ds, int hist_bins = 30) {
  if (in_ds.size() == 0 || out_ds.size() == 0)
    throw std::invalid_argument("ood_evaluate: both datasets must be non-empty");
  if (hist_bins < 1) throw std::invalid_argument("ood_evaluate: hist_bins must be >= 1");
  OodResult res;
  res.scores.resize(3);
  res.scores[0].name = "logpx";
  res.scores[1].name = "approx_mass";
  res.scores[2].name = "predictive";
  auto fill = [&](OodScoreResult& r, auto&& fn) {
    r.in_scores.reserve(in_ds.size());
    r.out_scores.reserve(out_ds.size());
    for (const Vec& x : in_ds.xs) r.in_scores.push_back(fn(x));
    for (const Vec& x : out_ds.xs) r.out_scores.push_back(fn(x));
    r.auroc = auroc(r.in_scores, r.out_scores);
    r.hist = detail::score_histogram(r.in_scores, r.out_scores, hist_bins);
  };
  fill(res.scores[0], [&](const Vec& x) { return logpx_score(m, x); });
  fill(res.scores[1], [&](const Vec& x) { return approx_mass_score(m, x); });
  fill(res.scores[2], [&](const Vec& x) { return predictive_score(m, x); });
  return res;
}

// Gradient of the cross-entropy - log p(label | x) with respect to the
// input, using the estimated gamma^2. One backward pass with upstream
// (sum_k p_k mu_k - mu_label) / gamma^2.
inline Vec xent_input_grad(const GmmcModel& m, const Vec& x, int label) {
  const double g2 = resolve_gamma2(m, Gamma2Mode::Estimated);
  ForwardTrace trace;
  forward_trace(m.spec, m.params, x, trace);
  const Vec& phi = trace.acts.back();
  const Vec d = class_sq_dists(m, phi);
  Vec p(d.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < d.size(); ++k) {
    p[k] = -d[k] / (2.0 * g2);
    mx = std::max(mx, p[k]);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    p[k] = std::exp(p[k] - mx);
    z += p[k];
  }
  const Vec& mu_y = m.centroids.mean_of(label);
  Vec upstream(phi.size(), 0.0);
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double pk = p[k] / z;
    const Vec& mu = m.centroids.means[k];
    for (std::size_t j = 0; j < upstream.size(); ++j) upstream[j] += pk * mu[j];
  }
  for (std::size_t j = 0; j < upstream.size(); ++j) upstream[j] = (upstream[j] - mu_y[j]) / g2;
  return grad_input(m.spec, m.params, trace, upstream);
}

struct AttackConfig {
  double epsilon = 0.0;   // L-inf radius
  int steps = 40;
  double step_size = 0.0;  // 0 selects epsilon / 10
  bool random_start = false;
};

inline void validate_attack_config(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0) || !std::isfinite(cfg.epsilon))
    throw std::invalid_argument("attack: epsilon must be non-negative");
  if (cfg.steps < 0) throw std::invalid_argument("attack: steps must be non-negative");
  if (cfg.step_size < 0.0) throw std::invalid_argument("attack: step_size must be non-negative");
}

// Projected gradient descent on the cross-entropy under an L-inf budget.
// Every iterate is clamped to the epsilon ball around x first and the data
// box second, so both constraints hold exactly on return. With epsilon = 0
// the input comes back unchanged.
inline Vec pgd_attack(const GmmcModel& m, const Vec& x, int label, const AttackConfig& cfg,
                      Rng* rng = nullptr) {
  validate_attack_config(cfg);
  if (cfg.random_start && rng == nullptr)
    throw std::invalid_argument("pgd_attack: random_start requires an rng");
  const double step = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 10.0;
  Vec lo(x.size()), hi(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    lo[j] = x[j] - cfg.epsilon;
    hi[j] = x[j] + cfg.epsilon;
  }
  Vec adv = x;
  if (cfg.random_start) {
    std::uniform_real_distribution<double> jitter(-cfg.epsilon, cfg.epsilon);
    for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += jitter(*rng);
  }
  auto project = [&](Vec& v) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < lo[j]) v[j] = lo[j];
      if (v[j] > hi[j]) v[j] = hi[j];
      if (v[j] < -1.0) v[j] = -1.0;
      if (v[j] > 1.0) v[j] = 1.0;
    }
  };
  project(adv);
  for (int t = 0; t < cfg.steps; ++t) {
    const Vec g = xent_input_grad(m, adv, label);
    if (!all_finite(g)) throw std::runtime_error("pgd_attack: non-finite gradient");
    for (std::size_t j = 0; j < adv.size(); ++j) {
      const double s = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
      adv[j] += step * s;
    }
    project(adv);
  }
  return adv;
}

// Fraction of examples still classified correctly after a per-example attack.
inline double robust_accuracy(const GmmcModel& m, const LabeledDataset& ds,
                              const AttackConfig& cfg, Rng* rng = nullptr) {
  if (ds.size() == 0) throw std::invalid_argument("robust_accuracy: empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Vec adv = pgd_attack(m, ds.xs[i], ds.labels[i], cfg, rng);
    if (classify(m, adv) == ds.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

// PGD under an L2 budget: gradient steps of fixed L2 length, followed by
// projection onto the epsilon ball and the box.
inline Vec l2_pgd_attack(const GmmcModel& m, const Vec& x, int label, double epsilon, int steps,
                         double step_size) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("l2_pgd_attack: epsilon must be non-negative");
  Vec adv = x;
  for (int t = 0; t < steps; ++t) {
    Vec g = xent_input_grad(m, adv, label);
    const double gn = norm2(g);
    if (!std::isfinite(gn)) throw std::runtime_error("l2_pgd_attack: non-finite gradient");
    if (gn == 0.0) break;
    axpy(step_size / gn, g, adv);
    Vec delta(adv.size());
    for (std::size_t j = 0; j < adv.size(); ++j) delta[j] = adv[j] - x[j];
    const double dn = norm2(delta);
    if (dn > epsilon) {
      const double f = epsilon / dn;
      for (std::size_t j = 0; j < adv.size(); ++j) adv[j] = x[j] + f * delta[j];
    }
    clamp_box(adv, -1.0, 1.0);
  }
  return adv;
}

struct MinL2Config {
  double max_epsilon = 2.0;
  int halvings = 12;
  int attack_steps = 40;
  double step_factor = 2.5;  // inner PGD step = step_factor * eps / steps
};

struct MinL2Result {
  bool found = false;
  double norm = 0.0;
  Vec adv;
};

// Smallest-L2 misclassifying perturbation, located by binary search over the
// attack budget. The best (smallest-norm) success seen anywhere in the
// search is returned, so a larger halving budget never reports a larger
// norm. Requires the clean input to be classified correctly.
inline MinL2Result min_l2_perturbation(const GmmcModel& m, const Vec& x, int label,
                                       const MinL2Config& cfg) {
  if (!(cfg.max_epsilon > 0.0)) throw std::invalid_argument("min_l2: max_epsilon must be positive");
  if (cfg.halvings < 0) throw std::invalid_argument("min_l2: halvings must be non-negative");
  if (cfg.attack_steps < 1) throw std::invalid_argument("min_l2: attack_steps must be >= 1");
  if (classify(m, x) != label)
    throw std::invalid_argument("min_l2: input must be correctly classified");
  MinL2Result best;
  auto attempt = [&](double eps) {
    const double step = cfg.step_factor * eps / static_cast<double>(cfg.attack_steps);
    Vec adv = l2_pgd_attack(m, x, label, eps, cfg.attack_steps, step);
    if (classify(m, adv) == label) return false;
    Vec delta(adv.size());
    for (std::size_t j = 0; j < adv.size(); ++j) delta[j] = adv[j] - x[j];
    const double n = norm2(delta);
    if (!best.found || n < best.norm) {
      best.found = true;
      best.norm = n;
      best.adv = std::move(adv);
    }
    return true;
  };
  if (!attempt(cfg.max_epsilon)) return best;
  double lo = 0.0, hi = cfg.max_epsilon;
  for (int i = 0; i < cfg.halvings; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (attempt(mid))
      hi = mid;
    else
      lo = mid;
  }
  return best;
}

}  // namespace gmmc

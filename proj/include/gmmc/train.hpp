// Training loops. Three regimes share one parameter update:
//
//   discriminative  minimize mean E(x, y) over labeled data only
//   generative      minimize mean E(x, y) - beta * mean E(x', y') where the
//                   primed batch comes from short-run chains over the replay
//                   buffer (the self-normalized maximum-likelihood surrogate)
//   joint           discriminative epochs up to a switch epoch, then the
//                   generative objective with beta ramped in linearly
//
// Energies use unit gamma^2 throughout training; the data-driven gamma^2 is
// estimated once after the last epoch and stored on the model.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/data.hpp"
#include "gmmc/model.hpp"
#include "gmmc/sampler.hpp"
#include "gmmc/vecops.hpp"

namespace gmmc {

enum class TrainMode { Discriminative, Generative, Joint };

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Discriminative: return "discriminative";
    case TrainMode::Generative: return "generative";
    case TrainMode::Joint: return "joint";
  }
  throw std::invalid_argument("train_mode_name: unknown mode");
}

inline TrainMode train_mode_from_name(const std::string& s) {
  if (s == "discriminative") return TrainMode::Discriminative;
  if (s == "generative") return TrainMode::Generative;
  if (s == "joint") return TrainMode::Joint;
  throw std::invalid_argument("train_mode_from_name: unknown mode '" + s + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::Discriminative;
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double lr_decay = 0.3;
  std::vector<int> lr_decay_epochs;  // lr multiplies by lr_decay at the start of each listed epoch
  double beta = 0.5;
  int joint_switch_epoch = 1;  // joint mode: first epoch trained contrastively
  int beta_ramp_epochs = 0;    // joint mode: epochs over which beta climbs from 0
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  std::size_t buffer_capacity = 10000;
  double reinit_prob = 0.025;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(cfg.lr_decay > 0.0) || !(cfg.lr_decay <= 1.0))
    throw std::invalid_argument("train: lr_decay must lie in (0,1]");
  if (!(cfg.beta >= 0.0)) throw std::invalid_argument("train: beta must be non-negative");
  if (cfg.joint_switch_epoch < 1) throw std::invalid_argument("train: joint_switch_epoch must be >= 1");
  if (cfg.beta_ramp_epochs < 0) throw std::invalid_argument("train: beta_ramp_epochs must be >= 0");
  if (cfg.mode != TrainMode::Discriminative) {
    validate_sampler_config(cfg.sampler);
    if (cfg.sampler.mode == SamplerMode::Sgld)
      throw std::invalid_argument("train: training uses the staged or noise_injected sampler");
    if (cfg.buffer_capacity < 1) throw std::invalid_argument("train: buffer_capacity must be >= 1");
    if (!(cfg.reinit_prob >= 0.0) || !(cfg.reinit_prob <= 1.0))
      throw std::invalid_argument("train: reinit_prob must lie in [0,1]");
  }
}

// Effective contrastive weight for a given 1-based epoch. Zero before the
// switch epoch; afterwards it ramps linearly over beta_ramp_epochs, so the
// switch epoch itself trains contrastively with weight 0 when a ramp is set.
inline double beta_at_epoch(const TrainConfig& cfg, int epoch) {
  if (cfg.mode == TrainMode::Discriminative) return 0.0;
  if (cfg.mode == TrainMode::Generative) return cfg.beta;
  if (epoch < cfg.joint_switch_epoch) return 0.0;
  if (cfg.beta_ramp_epochs == 0) return cfg.beta;
  const double k = static_cast<double>(epoch - cfg.joint_switch_epoch);
  const double f = k / static_cast<double>(cfg.beta_ramp_epochs);
  return cfg.beta * (f < 1.0 ? f : 1.0);
}

struct AdamState {
  Vec m, v;
  long long t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

inline void adam_update(ParameterVector& params, const ParameterVector& grad, double lr,
                        AdamState& st) {
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size() || grad.size() != params.size())
    throw std::invalid_argument("adam_update: size mismatch");
  st.t += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = kAdamBeta1 * st.m[i] + (1.0 - kAdamBeta1) * grad[i];
    st.v[i] = kAdamBeta2 * st.v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

struct TrainingDivergedError : std::runtime_error {
  int epoch;
  int batch;
  explicit TrainingDivergedError(int epoch_, int batch_, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch_) + " batch " +
                           std::to_string(batch_) + ": " + what),
        epoch(epoch_),
        batch(batch_) {}
};

namespace detail {

// Mean unit-gamma energy of a batch and its parameter gradient; grad is
// zeroed first. Inputs are referenced through pointers so dataset rows and
// freshly sampled vectors share one path (gradient bits do not depend on
// which caller assembled the batch).
inline double mean_energy_grad(const GmmcModel& m, const std::vector<const Vec*>& xs,
                               const std::vector<int>& ys, ParameterVector& grad) {
  const std::size_t B = xs.size();
  grad.assign(param_count(m.spec), 0.0);
  const double coeff = 1.0 / static_cast<double>(B);
  double loss = 0.0;
  ForwardTrace trace;
  Vec upstream;
  for (std::size_t i = 0; i < B; ++i) {
    forward_trace(m.spec, m.params, *xs[i], trace);
    const Vec& phi = trace.acts.back();
    const Vec& mu = m.centroids.mean_of(ys[i]);
    upstream.resize(phi.size());
    double e = 0.0;
    for (std::size_t j = 0; j < phi.size(); ++j) {
      upstream[j] = phi[j] - mu[j];
      e += upstream[j] * upstream[j];
    }
    loss += 0.5 * e;
    accumulate_grad_params(m.spec, m.params, trace, upstream, coeff, grad);
  }
  return loss / static_cast<double>(B);
}

}  // namespace detail

// One discriminative update on a batch. Returns the batch's mean energy.
inline double disc_step(GmmcModel& m, const std::vector<const Vec*>& xs,
                        const std::vector<int>& ys, double lr, AdamState& opt) {
  if (xs.empty() || xs.size() != ys.size()) throw std::invalid_argument("disc_step: bad batch");
  ParameterVector grad;
  const double loss = detail::mean_energy_grad(m, xs, ys, grad);
  if (!std::isfinite(loss) || !all_finite(grad))
    throw std::runtime_error("disc_step: non-finite loss or gradient");
  adam_update(m.params, grad, lr, opt);
  if (!all_finite(m.params)) throw std::runtime_error("disc_step: non-finite parameters");
  return loss;
}

struct GenStepStats {
  double loss_real = 0.0;
  double loss_sampled = 0.0;
};

// One contrastive update. Chains are initialized from the buffer, run with
// the pre-update parameters, and written back only after the update. With
// beta = 0 the combined gradient is exactly the real-batch gradient, so the
// parameter update matches disc_step bit for bit.
inline GenStepStats gen_step(GmmcModel& m, const std::vector<const Vec*>& xs,
                             const std::vector<int>& ys, ReplayBuffer& buf,
                             const SamplerConfig& sampler, double beta, double lr, AdamState& opt,
                             Rng& chain_rng) {
  if (xs.empty() || xs.size() != ys.size()) throw std::invalid_argument("gen_step: bad batch");
  const std::size_t B = xs.size();
  std::vector<ChainStart> starts;
  std::vector<Vec> sampled;
  starts.reserve(B);
  sampled.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    ChainStart st = init_chain(buf, m.centroids.num_classes);
    sampled.push_back(run_chain(m, st.x0, st.label, sampler, chain_rng));
    starts.push_back(std::move(st));
  }
  std::vector<const Vec*> sxs(B);
  std::vector<int> sys(B);
  for (std::size_t i = 0; i < B; ++i) {
    sxs[i] = &sampled[i];
    sys[i] = starts[i].label;
  }
  ParameterVector grad_real, grad_sampled;
  GenStepStats stats;
  stats.loss_real = detail::mean_energy_grad(m, xs, ys, grad_real);
  stats.loss_sampled = detail::mean_energy_grad(m, sxs, sys, grad_sampled);
  if (!std::isfinite(stats.loss_real) || !std::isfinite(stats.loss_sampled))
    throw std::runtime_error("gen_step: non-finite loss");
  ParameterVector& combined = grad_real;
  if (beta != 0.0) axpy(-beta, grad_sampled, combined);
  if (!all_finite(combined)) throw std::runtime_error("gen_step: non-finite gradient");
  adam_update(m.params, combined, lr, opt);
  if (!all_finite(m.params)) throw std::runtime_error("gen_step: non-finite parameters");
  for (std::size_t i = 0; i < B; ++i)
    buffer_put(buf, std::move(sampled[i]), starts[i].label, starts[i]);
  return stats;
}

struct EpochRecord {
  int epoch = 0;
  TrainMode mode = TrainMode::Discriminative;  // effective regime this epoch
  double beta = 0.0;
  double lr = 0.0;
  double loss_real = 0.0;
  double loss_sampled = std::numeric_limits<double>::quiet_NaN();
  double train_acc = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> records;
  std::optional<int> switch_epoch;  // joint mode: first contrastive epoch, if reached
  double gamma2 = 0.0;
};

// Full training run; the model is updated in place and receives the final
// gamma^2 estimate. Randomness comes from three seeded streams: shuffling
// uses seed, chain noise uses seed+1, the replay buffer uses seed+2. When
// out_buffer is given and the run was contrastive, the final replay buffer
// is moved into it. on_epoch, if set, sees each record as soon as the epoch
// finishes, so callers keep the completed ones even when a later epoch
// diverges.
inline TrainReport fit(GmmcModel& m, const LabeledDataset& train_ds, const LabeledDataset& test_ds,
                       const TrainConfig& cfg, ReplayBuffer* out_buffer = nullptr,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  validate_train_config(cfg);
  validate_model(m);
  validate_dataset(train_ds);
  validate_dataset(test_ds);
  if (train_ds.input_dim != m.spec.input_dim || test_ds.input_dim != m.spec.input_dim)
    throw std::invalid_argument("fit: dataset input_dim does not match network");
  if (train_ds.num_classes != m.centroids.num_classes)
    throw std::invalid_argument("fit: dataset num_classes does not match centroids");

  Rng shuffle_rng(cfg.seed);
  Rng chain_rng(cfg.seed + 1);
  ReplayBuffer buf;
  if (cfg.mode != TrainMode::Discriminative)
    buf = make_replay_buffer(cfg.buffer_capacity, train_ds.input_dim, cfg.reinit_prob, cfg.seed + 2);

  AdamState opt;
  double lr = cfg.learning_rate;
  TrainReport report;

  std::vector<std::size_t> order(train_ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int de : cfg.lr_decay_epochs)
      if (de == epoch) lr *= cfg.lr_decay;

    bool contrastive;
    double ebeta;
    switch (cfg.mode) {
      case TrainMode::Discriminative:
        contrastive = false;
        ebeta = 0.0;
        break;
      case TrainMode::Generative:
        contrastive = true;
        ebeta = cfg.beta;
        break;
      case TrainMode::Joint:
      default:
        contrastive = epoch >= cfg.joint_switch_epoch;
        ebeta = beta_at_epoch(cfg, epoch);
        break;
    }
    if (contrastive && !report.switch_epoch && cfg.mode == TrainMode::Joint)
      report.switch_epoch = epoch;

    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[pick(shuffle_rng)], order[i - 1]);
    }

    double sum_real = 0.0, sum_sampled = 0.0;
    std::size_t n_batches = 0;
    std::vector<const Vec*> bxs;
    std::vector<int> bys;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      bxs.clear();
      bys.clear();
      for (std::size_t i = at; i < end; ++i) {
        bxs.push_back(&train_ds.xs[order[i]]);
        bys.push_back(train_ds.labels[order[i]]);
      }
      try {
        if (contrastive) {
          const GenStepStats s = gen_step(m, bxs, bys, buf, cfg.sampler, ebeta, lr, opt, chain_rng);
          sum_real += s.loss_real;
          sum_sampled += s.loss_sampled;
        } else {
          sum_real += disc_step(m, bxs, bys, lr, opt);
        }
      } catch (const TrainingDivergedError&) {
        throw;
      } catch (const std::runtime_error& e) {
        throw TrainingDivergedError(epoch, static_cast<int>(n_batches + 1), e.what());
      }
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mode = contrastive ? TrainMode::Generative : TrainMode::Discriminative;
    rec.beta = ebeta;
    rec.lr = lr;
    rec.loss_real = sum_real / static_cast<double>(n_batches);
    if (contrastive) rec.loss_sampled = sum_sampled / static_cast<double>(n_batches);
    rec.train_acc = accuracy(m, train_ds);
    rec.test_acc = accuracy(m, test_ds);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  report.gamma2 = estimate_gamma2(m, train_ds);
  m.gamma2 = report.gamma2;
  if (out_buffer && cfg.mode != TrainMode::Discriminative) *out_buffer = std::move(buf);
  return report;
}

// Per-epoch CSV. The seconds column is written as a fixed 0.000 so identical
// runs produce identical bytes; wall-clock times stay in the report.
inline void write_train_csv(const TrainReport& report, std::uint64_t config_hash,
                            std::uint64_t seed, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_train_csv: cannot open " + path);
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(config_hash));
  out << "# config " << hash_hex << " seed " << seed << "\n";
  out << "epoch,mode,beta,lr,loss_real,loss_sampled,train_acc,test_acc,seconds\n";
  for (const EpochRecord& r : report.records) {
    out << r.epoch << ',' << train_mode_name(r.mode) << ',' << detail::fmt_g17(r.beta) << ','
        << detail::fmt_g17(r.lr) << ',' << detail::fmt_g17(r.loss_real) << ','
        << detail::fmt_g17(r.loss_sampled) << ',' << detail::fmt_g17(r.train_acc) << ','
        << detail::fmt_g17(r.test_acc) << ",0.000\n";
  }
  if (!out) throw std::runtime_error("write_train_csv: write failed");
}

}  // namespace gmmc

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gmmc/train.hpp"
#include "testutil.hpp"

using gmmc::AdamState;
using gmmc::GmmcModel;
using gmmc::LabeledDataset;
using gmmc::Rng;
using gmmc::TrainConfig;
using gmmc::TrainMode;
using gmmc::Vec;

namespace {

GmmcModel small_model(int input_dim, int classes, std::uint64_t seed) {
  gmmc::NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.widths = {8, 2};
  spec.activations = {gmmc::Activation::Tanh, gmmc::Activation::Identity};
  return gmmc::make_model(spec, gmmc::generate_opt_means(classes, 2, 10.0), seed);
}

std::vector<const Vec*> batch_ptrs(const LabeledDataset& ds, std::size_t from, std::size_t to) {
  std::vector<const Vec*> out;
  for (std::size_t i = from; i < to; ++i) out.push_back(&ds.xs[i]);
  return out;
}

std::vector<int> batch_labels(const LabeledDataset& ds, std::size_t from, std::size_t to) {
  return std::vector<int>(ds.labels.begin() + static_cast<std::ptrdiff_t>(from),
                          ds.labels.begin() + static_cast<std::ptrdiff_t>(to));
}

}  // namespace

TEST_CASE("adam first step moves by about the learning rate against the gradient") {
  // magnitudes well above kAdamEps, where the first step is lr to first order
  for (double g : {1e-4, 1.0, 1e8}) {
    Vec params{1.0};
    AdamState st;
    gmmc::adam_update(params, Vec{g}, 0.01, st);
    CHECK(params[0] < 1.0);  // gradient positive, parameter must drop
    CHECK(std::fabs((1.0 - params[0]) - 0.01) <= 0.01 * 0.01);
  }
  for (double g : {-1e-8, -1.0, -1e8}) {
    Vec params{1.0};
    AdamState st;
    gmmc::adam_update(params, Vec{g}, 0.01, st);
    CHECK(params[0] > 1.0);
  }
}

TEST_CASE("adam matches the textbook recursion on a two-step trace") {
  Vec params{0.5};
  AdamState st;
  gmmc::adam_update(params, Vec{0.2}, 0.1, st);
  gmmc::adam_update(params, Vec{-0.1}, 0.1, st);

  // Recompute independently.
  double m = 0.0, v = 0.0, p = 0.5;
  int t = 0;
  for (double g : {0.2, -0.1}) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    p -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(std::fabs(params[0] - p) <= 1e-15);
  CHECK(st.t == 2);
}

TEST_CASE("discriminative steps shrink the batch energy") {
  const LabeledDataset ds = gmmc::synth_mixture(2, 2, 40, 0.25, 3);
  GmmcModel m = small_model(2, 2, 7);
  AdamState opt;
  const auto xs = batch_ptrs(ds, 0, ds.size());
  const auto ys = batch_labels(ds, 0, ds.size());
  const double first = gmmc::disc_step(m, xs, ys, 0.05, opt);
  double last = first;
  for (int i = 0; i < 60; ++i) last = gmmc::disc_step(m, xs, ys, 0.05, opt);
  CHECK(last < 0.5 * first);
}

TEST_CASE("gen_step with beta zero reproduces disc_step bit for bit") {
  const LabeledDataset ds = gmmc::synth_mixture(2, 2, 64, 0.25, 5);
  GmmcModel a = small_model(2, 2, 11);
  GmmcModel b = a;
  AdamState opt_a, opt_b;
  gmmc::ReplayBuffer buf = gmmc::make_replay_buffer(32, 2, 0.05, 17);
  gmmc::SamplerConfig sampler;
  sampler.mode = gmmc::SamplerMode::Staged;
  sampler.steps = 3;
  sampler.step_size = 0.01;
  Rng chain_rng(23);
  for (int step = 0; step < 5; ++step) {
    const std::size_t from = static_cast<std::size_t>(step) * 16;
    const auto xs = batch_ptrs(ds, from, from + 16);
    const auto ys = batch_labels(ds, from, from + 16);
    const double loss_a = gmmc::disc_step(a, xs, ys, 0.01, opt_a);
    const auto stats = gmmc::gen_step(b, xs, ys, buf, sampler, 0.0, 0.01, opt_b, chain_rng);
    CHECK(loss_a == stats.loss_real);
    REQUIRE(a.params == b.params);
  }
  CHECK(buf.size() > 0u);  // the buffer still fills even though beta is zero
}

TEST_CASE("beta schedule ramps linearly after the switch epoch") {
  TrainConfig cfg;
  cfg.mode = TrainMode::Joint;
  cfg.beta = 0.8;
  cfg.joint_switch_epoch = 5;
  cfg.beta_ramp_epochs = 4;
  CHECK(gmmc::beta_at_epoch(cfg, 1) == 0.0);
  CHECK(gmmc::beta_at_epoch(cfg, 4) == 0.0);
  CHECK(gmmc::beta_at_epoch(cfg, 5) == 0.0);
  CHECK(gmmc::beta_at_epoch(cfg, 7) == 0.4);
  CHECK(gmmc::beta_at_epoch(cfg, 9) == 0.8);
  CHECK(gmmc::beta_at_epoch(cfg, 50) == 0.8);

  cfg.beta_ramp_epochs = 0;
  CHECK(gmmc::beta_at_epoch(cfg, 5) == 0.8);

  cfg.mode = TrainMode::Generative;
  CHECK(gmmc::beta_at_epoch(cfg, 1) == 0.8);
  cfg.mode = TrainMode::Discriminative;
  CHECK(gmmc::beta_at_epoch(cfg, 1) == 0.0);
}

TEST_CASE("fit with zero epochs only estimates gamma2") {
  const LabeledDataset ds = gmmc::synth_mixture(2, 2, 10, 0.2, 9);
  GmmcModel m = small_model(2, 2, 13);
  const Vec before = m.params;
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto report = gmmc::fit(m, ds, ds, cfg);
  CHECK(report.records.empty());
  CHECK(m.params == before);
  REQUIRE(m.gamma2.has_value());
  CHECK(*m.gamma2 == report.gamma2);
  CHECK(*m.gamma2 > 0.0);
}

TEST_CASE("discriminative fit separates the toy mixture and tracks lr decay") {
  const LabeledDataset full = gmmc::synth_mixture(2, 2, 120, 0.2, 21);
  const auto [train, test] = gmmc::split_dataset(full, 0.25, 22);
  GmmcModel m = small_model(2, 2, 23);
  TrainConfig cfg;
  cfg.mode = TrainMode::Discriminative;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.lr_decay = 0.5;
  cfg.lr_decay_epochs = {4};
  cfg.seed = 1;
  const auto report = gmmc::fit(m, train, test, cfg);
  REQUIRE(report.records.size() == 10);
  CHECK(report.records[0].lr == 0.05);
  CHECK(report.records[2].lr == 0.05);
  CHECK(report.records[3].lr == 0.025);
  CHECK(report.records[9].lr == 0.025);
  CHECK(report.records[9].test_acc >= 0.95);
  CHECK(std::isnan(report.records[0].loss_sampled));
  CHECK_FALSE(report.switch_epoch.has_value());
  for (const auto& r : report.records) CHECK(r.mode == TrainMode::Discriminative);
}

TEST_CASE("fit is deterministic and writes identical csv files") {
  const LabeledDataset full = gmmc::synth_mixture(2, 2, 60, 0.25, 31);
  const auto [train, test] = gmmc::split_dataset(full, 0.25, 32);
  TrainConfig cfg;
  cfg.mode = TrainMode::Generative;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.02;
  cfg.beta = 0.3;
  cfg.sampler.steps = 4;
  cfg.sampler.step_size = 0.02;
  cfg.buffer_capacity = 64;
  cfg.reinit_prob = 0.1;
  cfg.seed = 77;

  GmmcModel m1 = small_model(2, 2, 41);
  GmmcModel m2 = small_model(2, 2, 41);
  const auto r1 = gmmc::fit(m1, train, test, cfg);
  const auto r2 = gmmc::fit(m2, train, test, cfg);
  CHECK(m1.params == m2.params);
  CHECK(*m1.gamma2 == *m2.gamma2);

  testutil::TempDir tmp;
  gmmc::write_train_csv(r1, 0xabcdef0123456789ull, cfg.seed, tmp.file("a.csv"));
  gmmc::write_train_csv(r2, 0xabcdef0123456789ull, cfg.seed, tmp.file("b.csv"));
  const std::string a = testutil::read_file(tmp.file("a.csv"));
  const std::string b = testutil::read_file(tmp.file("b.csv"));
  CHECK(a == b);
  CHECK(a.find("# config abcdef0123456789 seed 77\n") == 0);
  CHECK(a.find("epoch,mode,beta,lr,loss_real,loss_sampled,train_acc,test_acc,seconds\n") !=
        std::string::npos);
  CHECK(a.find(",0.000\n") != std::string::npos);
}

TEST_CASE("joint fit switches regimes at the configured epoch") {
  const LabeledDataset full = gmmc::synth_mixture(2, 2, 60, 0.25, 51);
  const auto [train, test] = gmmc::split_dataset(full, 0.25, 52);
  GmmcModel m = small_model(2, 2, 53);
  TrainConfig cfg;
  cfg.mode = TrainMode::Joint;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.02;
  cfg.beta = 0.4;
  cfg.joint_switch_epoch = 3;
  cfg.beta_ramp_epochs = 2;
  cfg.sampler.steps = 4;
  cfg.sampler.step_size = 0.02;
  cfg.buffer_capacity = 64;
  cfg.seed = 2;
  const auto report = gmmc::fit(m, train, test, cfg);
  REQUIRE(report.records.size() == 5);
  REQUIRE(report.switch_epoch.has_value());
  CHECK(*report.switch_epoch == 3);
  CHECK(report.records[0].mode == TrainMode::Discriminative);
  CHECK(report.records[1].mode == TrainMode::Discriminative);
  CHECK(report.records[2].mode == TrainMode::Generative);
  CHECK(report.records[4].mode == TrainMode::Generative);
  CHECK(std::isnan(report.records[0].loss_sampled));
  CHECK(std::isfinite(report.records[2].loss_sampled));
  CHECK(report.records[2].beta == 0.0);  // ramp starts at zero on the switch epoch
  CHECK(report.records[3].beta == 0.2);
  CHECK(report.records[4].beta == 0.4);

  // A switch epoch beyond the run degenerates to pure discriminative training.
  GmmcModel m2 = small_model(2, 2, 53);
  cfg.joint_switch_epoch = 99;
  const auto r2 = gmmc::fit(m2, train, test, cfg);
  CHECK_FALSE(r2.switch_epoch.has_value());
  for (const auto& r : r2.records) CHECK(r.mode == TrainMode::Discriminative);
}

TEST_CASE("a blown-up learning rate raises a diverged error with context") {
  const LabeledDataset ds = gmmc::synth_mixture(2, 2, 40, 0.25, 61);
  GmmcModel m = small_model(2, 2, 63);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e300;
  cfg.seed = 3;
  try {
    gmmc::fit(m, ds, ds, cfg);
    FAIL("expected TrainingDivergedError");
  } catch (const gmmc::TrainingDivergedError& e) {
    CHECK(e.epoch >= 1);
    CHECK(e.batch >= 1);
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("train config validation rejects bad values") {
  TrainConfig cfg;
  cfg.epochs = -1;
  CHECK_THROWS_AS(gmmc::validate_train_config(cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(gmmc::validate_train_config(cfg), std::invalid_argument);
  cfg.learning_rate = 0.1;
  cfg.lr_decay = 0.0;
  CHECK_THROWS_AS(gmmc::validate_train_config(cfg), std::invalid_argument);
  cfg.lr_decay = 0.3;
  cfg.mode = TrainMode::Generative;
  cfg.sampler.mode = gmmc::SamplerMode::Sgld;
  CHECK_THROWS_AS(gmmc::validate_train_config(cfg), std::invalid_argument);
  cfg.sampler.mode = gmmc::SamplerMode::Staged;
  cfg.reinit_prob = 1.5;
  CHECK_THROWS_AS(gmmc::validate_train_config(cfg), std::invalid_argument);
  cfg.reinit_prob = 0.05;
  CHECK_NOTHROW(gmmc::validate_train_config(cfg));
}

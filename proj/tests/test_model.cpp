#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gmmc/model.hpp"
#include "testutil.hpp"

using gmmc::Activation;
using gmmc::Gamma2Mode;
using gmmc::GmmcModel;
using gmmc::LabeledDataset;
using gmmc::Vec;

using testutil::identity_model;

TEST_CASE("energy is the scaled squared feature distance") {
  GmmcModel m = identity_model(3, 2, 10.0);
  const Vec x{10.0, 0.0, 0.0};  // exactly the first centroid
  CHECK(gmmc::energy(m, x, 1) == 0.0);
  CHECK(gmmc::energy(m, x, 2) == 200.0);  // ||(10,0,0)-(-10,0,0)||^2 / 2
  m.gamma2 = 2.0;
  CHECK(gmmc::energy(m, x, 2, Gamma2Mode::Estimated) == 100.0);
  CHECK_THROWS_AS(gmmc::energy(m, x, 3), std::invalid_argument);
  CHECK_THROWS_AS(gmmc::energy(m, Vec{0.0, 0.0}, 1), std::invalid_argument);
}

TEST_CASE("posterior hits the closed form at a centroid") {
  GmmcModel m = identity_model(3, 2, 10.0);
  // With x = mu_1 the energy gap is 4 S^2 / (2 gamma^2); choosing
  // gamma^2 = 2 S^2 / ln 9 makes the posterior exactly (0.9, 0.1).
  m.gamma2 = 2.0 * 100.0 / std::log(9.0);
  const Vec p = gmmc::posterior(m, Vec{10.0, 0.0, 0.0});
  REQUIRE(p.size() == 2);
  CHECK(std::fabs(p[0] - 0.9) <= 1e-12);
  CHECK(std::fabs(p[1] - 0.1) <= 1e-12);
  CHECK(std::fabs(p[0] + p[1] - 1.0) <= 1e-12);
}

TEST_CASE("posterior is uniform at the equidistant point") {
  GmmcModel m = identity_model(2, 3, 1.0);
  m.gamma2 = 0.37;
  const Vec p = gmmc::posterior(m, Vec{0.0, 0.0});
  for (double v : p) CHECK(std::fabs(v - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("posterior requires an estimated gamma2 unless unit mode is forced") {
  GmmcModel m = identity_model(2, 3, 1.0);
  CHECK_THROWS_AS(gmmc::posterior(m, Vec{0.0, 0.0}), std::logic_error);
  const Vec p = gmmc::posterior(m, Vec{0.0, 0.0}, Gamma2Mode::Unit);
  CHECK(std::fabs(p[0] - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("classification picks the nearest centroid and breaks ties low") {
  GmmcModel m = identity_model(2, 3, 1.0);
  CHECK(gmmc::classify(m, Vec{0.9, 0.05}) == 1);
  CHECK(gmmc::classify(m, Vec{-0.4, 0.7}) == 2);
  CHECK(gmmc::classify(m, Vec{-0.4, -0.7}) == 3);
  // Antipodal pair: the origin is an exact tie, resolved to the lower label.
  GmmcModel pair = identity_model(3, 2, 10.0);
  CHECK(gmmc::classify(pair, Vec{0.0, 0.0, 0.0}) == 1);
}

TEST_CASE("accuracy counts nearest-centroid hits") {
  GmmcModel m = identity_model(3, 2, 10.0);
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.input_dim = 3;
  ds.xs = {Vec{0.9, 0.0, 0.0}, Vec{-0.9, 0.1, 0.0}, Vec{0.5, 0.2, -0.2}, Vec{-0.3, 0.0, 0.4}};
  ds.labels = {1, 2, 1, 1};  // last one actually lands nearer centroid 2
  CHECK(gmmc::accuracy(m, ds) == 0.75);
  LabeledDataset empty;
  empty.num_classes = 2;
  empty.input_dim = 3;
  CHECK_THROWS_AS(gmmc::accuracy(m, empty), std::invalid_argument);
}

TEST_CASE("gamma2 estimate matches the per-dimension residual average") {
  GmmcModel m = identity_model(2, 3, 1.0);
  LabeledDataset ds;
  ds.num_classes = 3;
  ds.input_dim = 2;
  // Residual of 0.9 mu_y against mu_y has squared norm 0.01 exactly at S=1.
  ds.xs = {Vec{0.9, 0.0}, Vec{-0.45, 0.9 * std::sqrt(3.0) / 2.0}};
  ds.labels = {1, 2};
  const double g2 = gmmc::estimate_gamma2(m, ds);
  CHECK(std::fabs(g2 - 0.01 / 2.0) <= 1e-12);

  LabeledDataset exact;
  exact.num_classes = 3;
  exact.input_dim = 2;
  exact.xs = {Vec{1.0, 0.0}};
  exact.labels = {1};
  CHECK_THROWS_AS(gmmc::estimate_gamma2(m, exact), std::runtime_error);
}

TEST_CASE("logpx hits the closed form at a centroid") {
  GmmcModel m = identity_model(3, 2, 10.0);
  m.gamma2 = 2.0 * 100.0 / std::log(3.0);
  const double s = gmmc::logpx_score(m, Vec{10.0, 0.0, 0.0});
  CHECK(std::fabs(s - std::log(4.0 / 3.0)) <= 1e-12);
}

TEST_CASE("logpx falls as inputs move away from all centroids") {
  GmmcModel m = identity_model(3, 2, 10.0);
  m.gamma2 = 1.0;
  double prev = gmmc::logpx_score(m, Vec{0.0, 0.0, 0.0});
  for (double t : {2.0, 5.0, 9.0}) {
    const double cur = gmmc::logpx_score(m, Vec{0.0, t, 0.0});
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("approx mass vanishes at the symmetric point and is never positive") {
  GmmcModel m = identity_model(3, 2, 10.0);
  m.gamma2 = 3.0;
  CHECK(gmmc::approx_mass_score(m, Vec{0.0, 0.0, 0.0}) == 0.0);
  gmmc::Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    Vec x{u(rng), u(rng), u(rng)};
    CHECK(gmmc::approx_mass_score(m, x) <= 0.0);
  }
}

TEST_CASE("predictive score is the maximum posterior and stays below one") {
  GmmcModel m = identity_model(2, 3, 1.0);
  m.gamma2 = 0.25;
  gmmc::Rng rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    Vec x{u(rng), u(rng)};
    const double s = gmmc::predictive_score(m, x);
    CHECK(s >= 1.0 / 3.0 - 1e-12);
    CHECK(s < 1.0);
    const Vec p = gmmc::posterior(m, x);
    CHECK(s == std::max({p[0], p[1], p[2]}));
  }
}

TEST_CASE("a constant feature map gives equal energies everywhere") {
  gmmc::NetworkSpec spec;
  spec.input_dim = 4;
  spec.widths = {3};
  spec.activations = {Activation::Identity};
  GmmcModel m;
  m.spec = spec;
  m.params.assign(gmmc::param_count(spec), 0.0);  // phi(x) = 0 for every x
  m.centroids = gmmc::generate_opt_means(3, 3, 10.0);
  // first centroid is (S, 0, 0) exactly, so its energy is S^2 / 2 exactly
  CHECK(gmmc::energy(m, Vec{0.1, 0.2, 0.3, 0.4}, 1) == 50.0);
  for (int k = 1; k <= 3; ++k) {
    const double a = gmmc::energy(m, Vec{0.1, 0.2, 0.3, 0.4}, k);
    const double b = gmmc::energy(m, Vec{-1.0, 1.0, -1.0, 1.0}, k);
    CHECK(a == b);  // the input never reaches the features
    CHECK(std::fabs(a - 50.0) < 1e-9);
  }
}

TEST_CASE("model construction is seeded and validated") {
  gmmc::NetworkSpec spec;
  spec.input_dim = 5;
  spec.widths = {4, 3};
  spec.activations = {Activation::Tanh, Activation::Identity};
  const auto centroids = gmmc::generate_opt_means(4, 3, 10.0);
  const GmmcModel a = gmmc::make_model(spec, centroids, 42);
  const GmmcModel b = gmmc::make_model(spec, centroids, 42);
  const GmmcModel c = gmmc::make_model(spec, centroids, 43);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  CHECK_FALSE(a.gamma2.has_value());

  const auto wrong_dim = gmmc::generate_opt_means(3, 2, 10.0);
  CHECK_THROWS_AS(gmmc::make_model(spec, wrong_dim, 42), std::invalid_argument);
}

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gmmc/centroids.hpp"
#include "testutil.hpp"

using gmmc::CentroidSet;
using gmmc::generate_opt_means;
using gmmc::Vec;

TEST_CASE("two classes in three dims are antipodal on the first axis") {
  const CentroidSet set = generate_opt_means(2, 3, 10.0);
  REQUIRE(set.means.size() == 2);
  CHECK(set.means[0] == Vec{10.0, 0.0, 0.0});
  CHECK(set.means[1] == Vec{-10.0, 0.0, 0.0});
}

TEST_CASE("three classes in the plane form the unit simplex") {
  const CentroidSet set = generate_opt_means(3, 2, 1.0);
  const double r3h = std::sqrt(3.0) / 2.0;
  CHECK(std::fabs(set.means[0][0] - 1.0) <= 1e-12);
  CHECK(std::fabs(set.means[0][1] - 0.0) <= 1e-12);
  CHECK(std::fabs(set.means[1][0] + 0.5) <= 1e-12);
  CHECK(std::fabs(set.means[1][1] - r3h) <= 1e-12);
  CHECK(std::fabs(set.means[2][0] + 0.5) <= 1e-12);
  CHECK(std::fabs(set.means[2][1] + r3h) <= 1e-12);
}

TEST_CASE("norms and pairwise cosines hit their design values") {
  for (const auto& [C, d] : std::vector<std::pair<int, int>>{{2, 1}, {3, 5}, {5, 4}, {10, 16}, {17, 16}}) {
    const double S = 10.0;
    const CentroidSet set = generate_opt_means(C, d, S);
    for (const Vec& mu : set.means) CHECK(std::fabs(gmmc::norm2(mu) - S) <= 1e-9 * S);
    const auto cos = gmmc::pairwise_cosines(set);
    const double want = -1.0 / static_cast<double>(C - 1);
    for (int i = 0; i < C; ++i)
      for (int j = 0; j < C; ++j) {
        if (i == j)
          CHECK(std::fabs(cos[i][j] - 1.0) <= 1e-12);
        else
          CHECK(std::fabs(cos[i][j] - want) <= 1e-9);
      }
  }
}

TEST_CASE("boundary case C = d+1 closes the simplex") {
  const CentroidSet set = generate_opt_means(4, 3, 2.5);
  for (const Vec& mu : set.means) CHECK(std::fabs(gmmc::norm2(mu) - 2.5) <= 1e-9);
  const auto cos = gmmc::pairwise_cosines(set);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) CHECK(std::fabs(cos[i][j] + 1.0 / 3.0) <= 1e-9);
}

TEST_CASE("construction is bitwise deterministic") {
  const CentroidSet a = generate_opt_means(7, 12, 10.0);
  const CentroidSet b = generate_opt_means(7, 12, 10.0);
  REQUIRE(a.means == b.means);
}

TEST_CASE("invalid shapes and scales are rejected") {
  CHECK_THROWS_AS(generate_opt_means(1, 3, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_opt_means(5, 3, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_opt_means(3, 0, 10.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_opt_means(3, 4, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_opt_means(3, 4, -1.0), std::invalid_argument);
}

TEST_CASE("nearest centroid picks the closest mean, ties to the lowest label") {
  const CentroidSet set = generate_opt_means(3, 2, 1.0);
  CHECK(gmmc::nearest_centroid(set, set.means[1]) == 2);
  CHECK(gmmc::nearest_centroid(set, set.means[2]) == 3);
  // Two classes sit at +S and -S on the first axis, so the origin ties both
  // distances bit for bit and the lower label must win.
  const CentroidSet pair = generate_opt_means(2, 2, 1.0);
  CHECK(gmmc::nearest_centroid(pair, Vec{0.0, 0.0}) == 1);
  CHECK_THROWS_AS(gmmc::nearest_centroid(set, Vec{0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("text round trip preserves every bit") {
  const CentroidSet set = generate_opt_means(6, 9, 10.0);
  const CentroidSet back = gmmc::centroids_from_text(gmmc::centroids_to_text(set));
  REQUIRE(back.num_classes == set.num_classes);
  REQUIRE(back.feature_dim == set.feature_dim);
  REQUIRE(back.scale == set.scale);
  REQUIRE(back.means == set.means);
}

TEST_CASE("malformed centroid text is rejected") {
  CHECK_THROWS_AS(gmmc::centroids_from_text("bogus v1 2 2 1\n1 0\n-1 0\n"), std::runtime_error);
  CHECK_THROWS_AS(gmmc::centroids_from_text("mmd v2 2 2 1\n1 0\n-1 0\n"), std::runtime_error);
  CHECK_THROWS_AS(gmmc::centroids_from_text("mmd v1 2 2 1\n1 0\n"), std::runtime_error);
  CHECK_THROWS_AS(gmmc::centroids_from_text("mmd v1 2 2 1\n1 0\n-1 0\n7\n"), std::runtime_error);
  CHECK_THROWS_AS(gmmc::centroids_from_text("mmd v1 2 2 1\n1 nan\n-1 0\n"), std::runtime_error);
}

TEST_CASE("file save and load round trip") {
  testutil::TempDir tmp;
  const CentroidSet set = generate_opt_means(5, 8, 10.0);
  gmmc::save_centroids(set, tmp.file("means.txt"));
  const CentroidSet back = gmmc::load_centroids(tmp.file("means.txt"));
  CHECK(back.means == set.means);
  CHECK_THROWS_AS(gmmc::load_centroids(tmp.file("missing.txt")), std::runtime_error);
}

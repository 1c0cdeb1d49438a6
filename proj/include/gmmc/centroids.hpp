// Pre-designed centroid sets with maximal pairwise Mahalanobis separation.
//
// For C classes in a d-dimensional feature space (C <= d+1) the construction
// places all centroids on a sphere of radius S so that every pair subtends
// the same angle, with cosine -1/(C-1). This is the optimum of the minimal
// pairwise distance among equal-norm arrangements, and it is computed once
// up front rather than learned.
#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/vecops.hpp"

namespace gmmc {

struct CentroidSet {
  int num_classes = 0;   // C
  int feature_dim = 0;   // d
  double scale = 0.0;    // S, the common norm of every centroid
  std::vector<Vec> means;  // C rows, each of length d

  const Vec& mean_of(int label) const {  // label is 1-based
    if (label < 1 || label > num_classes)
      throw std::invalid_argument("CentroidSet: label out of range");
    return means[static_cast<std::size_t>(label - 1)];
  }
};

// Deterministic construction of the C equiangular unit directions, scaled by S.
// Each row i is filled coordinate by coordinate against the previous rows so
// that all pairwise inner products equal -1/(C-1). Requires 2 <= C <= d+1.
// When C == d+1 the last row has no free coordinate left; its filled entries
// must already have unit norm, which is checked instead of assigned.
inline CentroidSet generate_opt_means(int num_classes, int feature_dim, double scale) {
  const int C = num_classes;
  const int d = feature_dim;
  if (C < 2) throw std::invalid_argument("generate_opt_means: need at least 2 classes");
  if (d < 1) throw std::invalid_argument("generate_opt_means: feature_dim must be positive");
  if (C > d + 1) throw std::invalid_argument("generate_opt_means: num_classes may not exceed feature_dim + 1");
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("generate_opt_means: scale must be positive and finite");

  const double target = -1.0 / static_cast<double>(C - 1);
  std::vector<Vec> u(static_cast<std::size_t>(C), Vec(static_cast<std::size_t>(d), 0.0));
  u[0][0] = 1.0;
  for (int i = 1; i < C; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int t = 0; t < j; ++t) dot += u[i][t] * u[j][t];
      u[i][j] = (target - dot) / u[j][j];
    }
    const double filled = dot(u[i], u[i]);
    if (i < d) {
      double rem = 1.0 - filled;
      if (rem < 0.0) {
        if (rem < -1e-9) throw std::runtime_error("generate_opt_means: negative residual");
        rem = 0.0;
      }
      u[i][i] = std::sqrt(rem);
    } else {
      // i == d can only happen for C == d+1; the residual must vanish.
      if (std::fabs(1.0 - filled) > 1e-9)
        throw std::runtime_error("generate_opt_means: simplex closure residual too large");
    }
  }

  CentroidSet set;
  set.num_classes = C;
  set.feature_dim = d;
  set.scale = scale;
  set.means.resize(static_cast<std::size_t>(C));
  for (int i = 0; i < C; ++i) {
    set.means[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(i)];
    gmmc::scale(set.means[static_cast<std::size_t>(i)], scale);
  }
  return set;
}

// Full C x C matrix of cosines between centroids (diagonal is 1).
inline std::vector<Vec> pairwise_cosines(const CentroidSet& set) {
  const int C = set.num_classes;
  std::vector<Vec> cos(static_cast<std::size_t>(C), Vec(static_cast<std::size_t>(C), 0.0));
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      const Vec& a = set.means[static_cast<std::size_t>(i)];
      const Vec& b = set.means[static_cast<std::size_t>(j)];
      cos[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dot(a, b) / (norm2(a) * norm2(b));
    }
  return cos;
}

// 1-based index of the centroid closest to z in Euclidean distance.
// Exact ties resolve to the lowest index.
inline int nearest_centroid(const CentroidSet& set, const Vec& z) {
  if (static_cast<int>(z.size()) != set.feature_dim)
    throw std::invalid_argument("nearest_centroid: dimension mismatch");
  int best = 1;
  double best_d = sq_dist(z, set.means[0]);
  for (int k = 2; k <= set.num_classes; ++k) {
    const double dk = sq_dist(z, set.means[static_cast<std::size_t>(k - 1)]);
    if (dk < best_d) {
      best_d = dk;
      best = k;
    }
  }
  return best;
}

namespace detail {
inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}
}  // namespace detail

// Text form: one header line "mmd v1 C d S", then C lines of d values.
// %.17g keeps doubles bit-exact across a save/load round trip.
inline std::string centroids_to_text(const CentroidSet& set) {
  std::string out = "mmd v1 " + std::to_string(set.num_classes) + " " +
                    std::to_string(set.feature_dim) + " " + detail::fmt_g17(set.scale) + "\n";
  for (const Vec& row : set.means) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ' ';
      out += detail::fmt_g17(row[j]);
    }
    out += '\n';
  }
  return out;
}

inline CentroidSet centroids_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  CentroidSet set;
  if (!(in >> magic >> version >> set.num_classes >> set.feature_dim >> set.scale))
    throw std::runtime_error("centroids_from_text: malformed header");
  if (magic != "mmd" || version != "v1")
    throw std::runtime_error("centroids_from_text: bad magic or version");
  if (set.num_classes < 2 || set.feature_dim < 1 || !(set.scale > 0.0))
    throw std::runtime_error("centroids_from_text: invalid header values");
  set.means.assign(static_cast<std::size_t>(set.num_classes),
                   Vec(static_cast<std::size_t>(set.feature_dim), 0.0));
  for (auto& row : set.means)
    for (double& v : row) {
      if (!(in >> v)) throw std::runtime_error("centroids_from_text: truncated data");
      if (!std::isfinite(v)) throw std::runtime_error("centroids_from_text: non-finite entry");
    }
  double extra;
  if (in >> extra) throw std::runtime_error("centroids_from_text: trailing data");
  return set;
}

inline void save_centroids(const CentroidSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_centroids: cannot open " + path);
  const std::string text = centroids_to_text(set);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("save_centroids: write failed for " + path);
}

inline CentroidSet load_centroids(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_centroids: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return centroids_from_text(buf.str());
}

}  // namespace gmmc

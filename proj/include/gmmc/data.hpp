// Datasets: labeled vectors in the box [-1,1]^D with 1-based class labels.
//
// Two sources are supported, a synthetic isotropic mixture for desk-scale
// experiments and the classic IDX image format (28x28 digits and friends).
// CSV import/export exists for debugging and plotting.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gmmc/centroids.hpp"
#include "gmmc/vecops.hpp"

namespace gmmc {

struct LabeledDataset {
  int num_classes = 0;
  int input_dim = 0;
  std::vector<Vec> xs;
  std::vector<int> labels;  // 1-based
  std::string name;

  std::size_t size() const { return xs.size(); }
};

inline void validate_dataset(const LabeledDataset& ds) {
  if (ds.num_classes < 1) throw std::invalid_argument("dataset: num_classes must be positive");
  if (ds.input_dim < 1) throw std::invalid_argument("dataset: input_dim must be positive");
  if (ds.xs.size() != ds.labels.size())
    throw std::invalid_argument("dataset: xs and labels length mismatch");
  for (std::size_t i = 0; i < ds.xs.size(); ++i) {
    if (static_cast<int>(ds.xs[i].size()) != ds.input_dim)
      throw std::invalid_argument("dataset: input dimension mismatch at row " + std::to_string(i));
    for (double v : ds.xs[i])
      if (!std::isfinite(v) || v < -1.0 || v > 1.0)
        throw std::invalid_argument("dataset: entry outside [-1,1] at row " + std::to_string(i));
    if (ds.labels[i] < 1 || ds.labels[i] > ds.num_classes)
      throw std::invalid_argument("dataset: label out of range at row " + std::to_string(i));
  }
}

inline std::vector<std::size_t> class_counts(const LabeledDataset& ds) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (int y : ds.labels) counts[static_cast<std::size_t>(y - 1)]++;
  return counts;
}

// Isotropic Gaussian blobs around C maximally separated anchor directions in
// input space, rescaled as a whole so every coordinate lands in [-1,1].
// Draw order: classes ascending, per_class points each, D normals per point.
// Requires C <= D+1 so the anchor construction applies.
inline LabeledDataset synth_mixture(int num_classes, int input_dim, int per_class, double sigma,
                                    std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("synth_mixture: per_class must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("synth_mixture: sigma must be non-negative");
  const CentroidSet anchors = generate_opt_means(num_classes, input_dim, 1.0);
  Rng rng(seed);
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.input_dim = input_dim;
  ds.name = "synth";
  ds.xs.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class));
  std::normal_distribution<double> noise(0.0, 1.0);
  double max_abs = 1.0;
  for (int y = 1; y <= num_classes; ++y) {
    const Vec& a = anchors.mean_of(y);
    for (int i = 0; i < per_class; ++i) {
      Vec x(static_cast<std::size_t>(input_dim));
      for (int j = 0; j < input_dim; ++j) {
        x[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)] + sigma * noise(rng);
        max_abs = std::max(max_abs, std::fabs(x[static_cast<std::size_t>(j)]));
      }
      ds.xs.push_back(std::move(x));
      ds.labels.push_back(y);
    }
  }
  if (max_abs > 1.0) {
    const double inv = 1.0 / max_abs;
    for (Vec& x : ds.xs) scale(x, inv);
  }
  return ds;
}

// Anchor directions of the mixture after the same global rescale that
// synth_mixture applies. Useful for nearest-anchor sanity checks.
inline std::vector<Vec> synth_anchors(const LabeledDataset& ds) {
  const CentroidSet anchors = generate_opt_means(ds.num_classes, ds.input_dim, 1.0);
  return anchors.means;
}

// Stratified split. Per class, round(fraction * count) examples go to the
// test side, clamped so both sides keep at least one example.
inline std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds,
                                                               double test_fraction,
                                                               std::uint64_t seed) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw std::invalid_argument("split_dataset: test_fraction must lie in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i] - 1)].push_back(i);
  for (int c = 0; c < ds.num_classes; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() < 2)
      throw std::invalid_argument("split_dataset: class " + std::to_string(c + 1) +
                                  " needs at least 2 examples");
  Rng rng(seed);
  LabeledDataset train, test;
  train.num_classes = test.num_classes = ds.num_classes;
  train.input_dim = test.input_dim = ds.input_dim;
  train.name = ds.name + "+train";
  test.name = ds.name + "+test";
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    // Fisher-Yates so the draw order is explicit.
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(idx[pick(rng)], idx[i - 1]);
    }
    const std::size_t n = idx.size();
    std::size_t t = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    t = std::max<std::size_t>(1, std::min(t, n - 1));
    for (std::size_t i = 0; i < n; ++i) {
      LabeledDataset& dst = (i < n - t) ? train : test;
      dst.xs.push_back(ds.xs[idx[i]]);
      dst.labels.push_back(ds.labels[idx[i]]);
    }
  }
  return {std::move(train), std::move(test)};
}

// Removes the given classes and densely relabels the remainder, preserving
// ascending order. The removed part keeps its own dense labels and serves as
// the out-of-distribution set.
inline std::pair<LabeledDataset, LabeledDataset> make_ood_pair(const LabeledDataset& ds,
                                                               const std::vector<int>& held_out) {
  if (held_out.empty()) throw std::invalid_argument("make_ood_pair: held_out must be non-empty");
  std::vector<bool> held(static_cast<std::size_t>(ds.num_classes) + 1, false);
  for (int y : held_out) {
    if (y < 1 || y > ds.num_classes)
      throw std::invalid_argument("make_ood_pair: held-out class out of range");
    held[static_cast<std::size_t>(y)] = true;
  }
  std::vector<int> in_map(static_cast<std::size_t>(ds.num_classes) + 1, 0);
  std::vector<int> out_map(static_cast<std::size_t>(ds.num_classes) + 1, 0);
  int n_in = 0, n_out = 0;
  for (int y = 1; y <= ds.num_classes; ++y) {
    if (held[static_cast<std::size_t>(y)])
      out_map[static_cast<std::size_t>(y)] = ++n_out;
    else
      in_map[static_cast<std::size_t>(y)] = ++n_in;
  }
  if (n_in == 0) throw std::invalid_argument("make_ood_pair: at least one class must remain");
  LabeledDataset in, out;
  in.num_classes = n_in;
  out.num_classes = n_out;
  in.input_dim = out.input_dim = ds.input_dim;
  in.name = ds.name + "+in";
  out.name = ds.name + "+ood";
  for (std::size_t i = 0; i < ds.xs.size(); ++i) {
    const int y = ds.labels[i];
    if (held[static_cast<std::size_t>(y)]) {
      out.xs.push_back(ds.xs[i]);
      out.labels.push_back(out_map[static_cast<std::size_t>(y)]);
    } else {
      in.xs.push_back(ds.xs[i]);
      in.labels.push_back(in_map[static_cast<std::size_t>(y)]);
    }
  }
  return {std::move(in), std::move(out)};
}

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error(std::string("idx: truncated ") + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace detail

// IDX pair loader. Pixels map through x = b/127.5 - 1; label bytes are
// 0-based on disk and become 1-based here. num_classes is the largest label
// byte plus one.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("load_idx: cannot open " + labels_path);

  const std::uint32_t img_magic = detail::read_u32_be(imgs, "image magic");
  if (img_magic != 0x00000803u)
    throw std::runtime_error("load_idx: bad image magic in " + images_path);
  const std::uint32_t n_img = detail::read_u32_be(imgs, "image count");
  const std::uint32_t rows = detail::read_u32_be(imgs, "rows");
  const std::uint32_t cols = detail::read_u32_be(imgs, "cols");

  const std::uint32_t lab_magic = detail::read_u32_be(labs, "label magic");
  if (lab_magic != 0x00000801u)
    throw std::runtime_error("load_idx: bad label magic in " + labels_path);
  const std::uint32_t n_lab = detail::read_u32_be(labs, "label count");
  if (n_img != n_lab) throw std::runtime_error("load_idx: image/label count mismatch");
  if (rows == 0 || cols == 0) throw std::runtime_error("load_idx: empty image geometry");

  const std::size_t dim = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  LabeledDataset ds;
  ds.input_dim = static_cast<int>(dim);
  ds.name = "idx";
  ds.xs.resize(n_img);
  ds.labels.resize(n_img);
  std::vector<unsigned char> buf(dim);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_img; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!imgs) throw std::runtime_error("load_idx: truncated image data");
    Vec& x = ds.xs[i];
    x.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) x[j] = static_cast<double>(buf[j]) / 127.5 - 1.0;
    int lb = labs.get();
    if (lb == EOF) throw std::runtime_error("load_idx: truncated label data");
    ds.labels[i] = lb + 1;
    max_label = std::max(max_label, lb + 1);
  }
  ds.num_classes = max_label;
  return ds;
}

// Quantizing IDX writer: coordinates map back through round((x+1)*127.5).
// Exact inverse of load_idx on byte-grid data; lossy otherwise.
inline void save_idx(const LabeledDataset& ds, const std::string& images_path,
                     const std::string& labels_path, int rows, int cols) {
  if (rows < 1 || cols < 1 || rows * cols != ds.input_dim)
    throw std::invalid_argument("save_idx: rows*cols must equal input_dim");
  if (ds.num_classes > 256) throw std::invalid_argument("save_idx: more than 256 classes");
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("save_idx: cannot open " + images_path);
  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("save_idx: cannot open " + labels_path);
  detail::write_u32_be(imgs, 0x00000803u);
  detail::write_u32_be(imgs, static_cast<std::uint32_t>(ds.size()));
  detail::write_u32_be(imgs, static_cast<std::uint32_t>(rows));
  detail::write_u32_be(imgs, static_cast<std::uint32_t>(cols));
  detail::write_u32_be(labs, 0x00000801u);
  detail::write_u32_be(labs, static_cast<std::uint32_t>(ds.size()));
  std::vector<unsigned char> buf(static_cast<std::size_t>(ds.input_dim));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < buf.size(); ++j) {
      long long q = std::llround((ds.xs[i][j] + 1.0) * 127.5);
      if (q < 0) q = 0;
      if (q > 255) q = 255;
      buf[j] = static_cast<unsigned char>(q);
    }
    imgs.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    labs.put(static_cast<char>(ds.labels[i] - 1));
  }
  if (!imgs || !labs) throw std::runtime_error("save_idx: write failed");
}

inline void save_dataset_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  out << "label";
  for (int j = 1; j <= ds.input_dim; ++j) out << ",x" << j;
  out << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.xs[i]) out << ',' << detail::fmt_g17(v);
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset_csv: write failed");
}

inline LabeledDataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  LabeledDataset ds;
  ds.name = "csv";
  std::string line;
  bool first = true;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("label", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) throw std::runtime_error("load_dataset_csv: empty row");
    Vec x;
    const int label = std::stoi(cell);
    while (std::getline(ls, cell, ',')) x.push_back(std::stod(cell));
    if (ds.input_dim == 0)
      ds.input_dim = static_cast<int>(x.size());
    else if (static_cast<int>(x.size()) != ds.input_dim)
      throw std::runtime_error("load_dataset_csv: ragged row");
    ds.xs.push_back(std::move(x));
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (ds.xs.empty()) throw std::runtime_error("load_dataset_csv: no rows");
  ds.num_classes = max_label;
  validate_dataset(ds);
  return ds;
}

}  // namespace gmmc

// Experiment configuration: a small INI-style format with [section] headers
// and key = value lines. Full-line comments start with # or ;. Keys are
// validated against a fixed schema so typos fail loudly, and the raw file
// bytes are hashed (FNV-1a, 64 bit) so result files can name the exact
// configuration that produced them.
#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmmc/data.hpp"
#include "gmmc/model.hpp"
#include "gmmc/train.hpp"

namespace gmmc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

struct KvDocument {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) > 0;
  }
  const std::string& get(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    if (s == sections.end() || !s->second.count(key))
      throw ConfigError("config: missing required key " + sec + "." + key);
    return s->second.at(key);
  }
};

inline KvDocument parse_kv(const std::string& text) {
  KvDocument doc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      section = detail::trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError("config: empty section name at line " + std::to_string(lineno));
      doc.sections[section];  // remember even if empty
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
    if (section.empty())
      throw ConfigError("config: key outside any section at line " + std::to_string(lineno));
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
    if (doc.sections[section].count(key))
      throw ConfigError("config: duplicate key " + section + "." + key + " at line " +
                        std::to_string(lineno));
    doc.sections[section][key] = value;
  }
  return doc;
}

namespace detail {

inline long long to_int(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " is not an integer: '" + v + "'");
  }
}

inline double to_double(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + where + " is not a number: '" + v + "'");
  }
}

inline bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + where + " is not a boolean: '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

inline long long cfg_int(const KvDocument& doc, const std::string& sec, const std::string& key,
                         long long def) {
  return doc.has(sec, key) ? detail::to_int(doc.get(sec, key), sec + "." + key) : def;
}

inline double cfg_double(const KvDocument& doc, const std::string& sec, const std::string& key,
                         double def) {
  return doc.has(sec, key) ? detail::to_double(doc.get(sec, key), sec + "." + key) : def;
}

inline bool cfg_bool(const KvDocument& doc, const std::string& sec, const std::string& key,
                     bool def) {
  return doc.has(sec, key) ? detail::to_bool(doc.get(sec, key), sec + "." + key) : def;
}

inline std::string cfg_string(const KvDocument& doc, const std::string& sec,
                              const std::string& key, const std::string& def) {
  return doc.has(sec, key) ? doc.get(sec, key) : def;
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string output_dir;

  std::string data_source;  // synth | idx | csv
  int classes = 0;
  int dim = 0;
  int per_class = 200;
  double sigma = 0.1;
  std::uint64_t data_seed = 1;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 2;
  std::string train_images, train_labels, test_images, test_labels;
  std::string train_csv, test_csv;
  std::vector<int> held_out;

  std::vector<int> widths;
  std::vector<Activation> activations;
  double centroid_scale = 10.0;
  std::uint64_t init_seed = 3;

  TrainConfig train;

  int calibration_buckets = 15;
  std::vector<double> epsilons;
  int attack_steps = 40;
  double attack_step_size = 0.0;
  bool random_start = false;
  int l2_examples = 20;
  double l2_max_epsilon = 2.0;
  int l2_halvings = 12;
  int l2_attack_steps = 40;
  int hist_bins = 30;

  std::uint64_t config_hash = 0;
  std::string base_dir = ".";
};

namespace detail {

inline void check_known_keys(const KvDocument& doc) {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"experiment", {"name", "seed", "output_dir"}},
      {"data",
       {"source", "classes", "dim", "per_class", "sigma", "seed", "test_fraction", "split_seed",
        "train_images", "train_labels", "test_images", "test_labels", "train_csv", "test_csv",
        "held_out"}},
      {"network", {"widths", "activations", "scale", "init_seed"}},
      {"train",
       {"mode", "epochs", "batch_size", "learning_rate", "lr_decay", "lr_decay_epochs", "beta",
        "joint_switch_epoch", "beta_ramp_epochs", "buffer_capacity", "reinit_prob"}},
      {"sampler", {"mode", "steps", "step_size", "gamma2", "clip"}},
      {"eval",
       {"calibration_buckets", "epsilons", "attack_steps", "attack_step_size", "random_start",
        "l2_examples", "l2_max_epsilon", "l2_halvings", "l2_attack_steps", "hist_bins"}},
  };
  for (const auto& [sec, kvs] : doc.sections) {
    auto s = schema.find(sec);
    if (s == schema.end()) throw ConfigError("config: unknown section [" + sec + "]");
    for (const auto& [key, value] : kvs)
      if (!s->second.count(key)) throw ConfigError("config: unknown key " + sec + "." + key);
  }
}

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty() || p.front() == '/') return p;
  return base_dir + "/" + p;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text,
                                                const std::string& base_dir = ".") {
  const KvDocument doc = parse_kv(text);
  detail::check_known_keys(doc);
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.config_hash = fnv1a64(text);

  c.name = cfg_string(doc, "experiment", "name", c.name);
  c.seed = static_cast<std::uint64_t>(cfg_int(doc, "experiment", "seed", 0));
  c.output_dir = cfg_string(doc, "experiment", "output_dir", "runs/" + c.name);

  c.data_source = cfg_string(doc, "data", "source", "");
  if (c.data_source != "synth" && c.data_source != "idx" && c.data_source != "csv")
    throw ConfigError("config: data.source must be synth, idx or csv");
  if (c.data_source == "synth") {
    c.classes = static_cast<int>(cfg_int(doc, "data", "classes", 0));
    c.dim = static_cast<int>(cfg_int(doc, "data", "dim", 0));
    if (c.classes < 2) throw ConfigError("config: data.classes must be >= 2 for synth");
    if (c.dim < 1) throw ConfigError("config: data.dim must be >= 1 for synth");
    c.per_class = static_cast<int>(cfg_int(doc, "data", "per_class", c.per_class));
    if (c.per_class < 2) throw ConfigError("config: data.per_class must be >= 2");
    c.sigma = cfg_double(doc, "data", "sigma", c.sigma);
    if (!(c.sigma >= 0.0)) throw ConfigError("config: data.sigma must be non-negative");
    c.data_seed = static_cast<std::uint64_t>(cfg_int(doc, "data", "seed", 1));
    c.test_fraction = cfg_double(doc, "data", "test_fraction", c.test_fraction);
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
      throw ConfigError("config: data.test_fraction must lie in (0,1)");
    c.split_seed = static_cast<std::uint64_t>(cfg_int(doc, "data", "split_seed", 2));
  } else if (c.data_source == "idx") {
    for (const char* k : {"train_images", "train_labels", "test_images", "test_labels"})
      if (!doc.has("data", k)) throw ConfigError(std::string("config: data.") + k + " is required for idx");
    c.train_images = detail::resolve_path(base_dir, doc.get("data", "train_images"));
    c.train_labels = detail::resolve_path(base_dir, doc.get("data", "train_labels"));
    c.test_images = detail::resolve_path(base_dir, doc.get("data", "test_images"));
    c.test_labels = detail::resolve_path(base_dir, doc.get("data", "test_labels"));
  } else {
    for (const char* k : {"train_csv", "test_csv"})
      if (!doc.has("data", k)) throw ConfigError(std::string("config: data.") + k + " is required for csv");
    c.train_csv = detail::resolve_path(base_dir, doc.get("data", "train_csv"));
    c.test_csv = detail::resolve_path(base_dir, doc.get("data", "test_csv"));
  }
  if (doc.has("data", "held_out")) {
    for (const std::string& s : detail::split_list(doc.get("data", "held_out")))
      c.held_out.push_back(static_cast<int>(detail::to_int(s, "data.held_out")));
    if (c.held_out.empty()) throw ConfigError("config: data.held_out must list at least one class");
  }

  if (!doc.has("network", "widths")) throw ConfigError("config: network.widths is required");
  for (const std::string& s : detail::split_list(doc.get("network", "widths"))) {
    const long long w = detail::to_int(s, "network.widths");
    if (w < 1) throw ConfigError("config: network.widths entries must be positive");
    c.widths.push_back(static_cast<int>(w));
  }
  if (c.widths.empty()) throw ConfigError("config: network.widths must list at least one layer");
  if (doc.has("network", "activations")) {
    for (const std::string& s : detail::split_list(doc.get("network", "activations"))) {
      try {
        c.activations.push_back(activation_from_name(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: network.activations: ") + e.what());
      }
    }
    if (c.activations.size() != c.widths.size())
      throw ConfigError("config: network.activations must match network.widths in length");
  } else {
    c.activations.assign(c.widths.size(), Activation::Tanh);
    c.activations.back() = Activation::Identity;
  }
  c.centroid_scale = cfg_double(doc, "network", "scale", c.centroid_scale);
  if (!(c.centroid_scale > 0.0)) throw ConfigError("config: network.scale must be positive");
  c.init_seed = static_cast<std::uint64_t>(cfg_int(doc, "network", "init_seed", 3));

  TrainConfig& t = c.train;
  try {
    t.mode = train_mode_from_name(cfg_string(doc, "train", "mode", "discriminative"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: train.mode: ") + e.what());
  }
  t.epochs = static_cast<int>(cfg_int(doc, "train", "epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg_int(doc, "train", "batch_size", t.batch_size));
  t.learning_rate = cfg_double(doc, "train", "learning_rate", t.learning_rate);
  t.lr_decay = cfg_double(doc, "train", "lr_decay", t.lr_decay);
  if (doc.has("train", "lr_decay_epochs"))
    for (const std::string& s : detail::split_list(doc.get("train", "lr_decay_epochs")))
      t.lr_decay_epochs.push_back(static_cast<int>(detail::to_int(s, "train.lr_decay_epochs")));
  t.beta = cfg_double(doc, "train", "beta", t.beta);
  t.joint_switch_epoch =
      static_cast<int>(cfg_int(doc, "train", "joint_switch_epoch", t.joint_switch_epoch));
  t.beta_ramp_epochs = static_cast<int>(cfg_int(doc, "train", "beta_ramp_epochs", t.beta_ramp_epochs));
  t.buffer_capacity =
      static_cast<std::size_t>(cfg_int(doc, "train", "buffer_capacity", static_cast<long long>(t.buffer_capacity)));
  t.reinit_prob = cfg_double(doc, "train", "reinit_prob", t.reinit_prob);
  t.seed = c.seed;

  try {
    t.sampler.mode = sampler_mode_from_name(cfg_string(doc, "sampler", "mode", "staged"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: sampler.mode: ") + e.what());
  }
  t.sampler.steps = static_cast<int>(cfg_int(doc, "sampler", "steps", t.sampler.steps));
  t.sampler.step_size = cfg_double(doc, "sampler", "step_size", t.sampler.step_size);
  t.sampler.gamma2 = cfg_double(doc, "sampler", "gamma2", t.sampler.gamma2);
  t.sampler.clip = cfg_bool(doc, "sampler", "clip", t.sampler.clip);

  try {
    validate_train_config(t);
    if (t.mode == TrainMode::Discriminative && doc.sections.count("sampler"))
      validate_sampler_config(t.sampler);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  c.calibration_buckets =
      static_cast<int>(cfg_int(doc, "eval", "calibration_buckets", c.calibration_buckets));
  if (c.calibration_buckets < 1) throw ConfigError("config: eval.calibration_buckets must be >= 1");
  if (doc.has("eval", "epsilons")) {
    for (const std::string& s : detail::split_list(doc.get("eval", "epsilons"))) {
      const double e = detail::to_double(s, "eval.epsilons");
      if (!(e >= 0.0)) throw ConfigError("config: eval.epsilons must be non-negative");
      c.epsilons.push_back(e);
    }
  } else {
    c.epsilons = {0.05, 0.1, 0.2};
  }
  c.attack_steps = static_cast<int>(cfg_int(doc, "eval", "attack_steps", c.attack_steps));
  if (c.attack_steps < 0) throw ConfigError("config: eval.attack_steps must be non-negative");
  c.attack_step_size = cfg_double(doc, "eval", "attack_step_size", c.attack_step_size);
  if (c.attack_step_size < 0.0) throw ConfigError("config: eval.attack_step_size must be non-negative");
  c.random_start = cfg_bool(doc, "eval", "random_start", c.random_start);
  c.l2_examples = static_cast<int>(cfg_int(doc, "eval", "l2_examples", c.l2_examples));
  if (c.l2_examples < 0) throw ConfigError("config: eval.l2_examples must be non-negative");
  c.l2_max_epsilon = cfg_double(doc, "eval", "l2_max_epsilon", c.l2_max_epsilon);
  if (!(c.l2_max_epsilon > 0.0)) throw ConfigError("config: eval.l2_max_epsilon must be positive");
  c.l2_halvings = static_cast<int>(cfg_int(doc, "eval", "l2_halvings", c.l2_halvings));
  if (c.l2_halvings < 0) throw ConfigError("config: eval.l2_halvings must be non-negative");
  c.l2_attack_steps = static_cast<int>(cfg_int(doc, "eval", "l2_attack_steps", c.l2_attack_steps));
  if (c.l2_attack_steps < 1) throw ConfigError("config: eval.l2_attack_steps must be >= 1");
  c.hist_bins = static_cast<int>(cfg_int(doc, "eval", "hist_bins", c.hist_bins));
  if (c.hist_bins < 1) throw ConfigError("config: eval.hist_bins must be >= 1");

  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string base = ".";
  const std::size_t slash = path.find_last_of('/');
  if (slash != std::string::npos) base = path.substr(0, slash);
  return parse_experiment_config(buf.str(), base);
}

struct DataBundle {
  LabeledDataset train, test;
  std::optional<LabeledDataset> ood;
};

// Materializes the dataset the config describes, including the optional
// held-out split (the out part of the test side becomes the OOD set).
inline DataBundle load_data(const ExperimentConfig& c) {
  LabeledDataset train, test;
  if (c.data_source == "synth") {
    const LabeledDataset full =
        synth_mixture(c.classes, c.dim, c.per_class, c.sigma, c.data_seed);
    auto pair = split_dataset(full, c.test_fraction, c.split_seed);
    train = std::move(pair.first);
    test = std::move(pair.second);
  } else if (c.data_source == "idx") {
    train = load_idx(c.train_images, c.train_labels);
    test = load_idx(c.test_images, c.test_labels);
  } else {
    train = load_dataset_csv(c.train_csv);
    test = load_dataset_csv(c.test_csv);
  }
  const int classes = std::max(train.num_classes, test.num_classes);
  train.num_classes = test.num_classes = classes;
  DataBundle bundle;
  if (!c.held_out.empty()) {
    auto tr = make_ood_pair(train, c.held_out);
    auto te = make_ood_pair(test, c.held_out);
    bundle.train = std::move(tr.first);
    bundle.test = std::move(te.first);
    bundle.ood = std::move(te.second);
  } else {
    bundle.train = std::move(train);
    bundle.test = std::move(test);
  }
  return bundle;
}

// Network and centroids as configured, sized to the data at hand.
inline GmmcModel build_model(const ExperimentConfig& c, int input_dim, int num_classes) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.widths = c.widths;
  spec.activations = c.activations;
  const CentroidSet centroids =
      generate_opt_means(num_classes, feature_dim(spec), c.centroid_scale);
  return make_model(spec, centroids, c.init_seed);
}

}  // namespace gmmc

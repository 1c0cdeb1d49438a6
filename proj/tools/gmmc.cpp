// gmmc: centroid generation, training, sampling and evaluation from the
// command line. Exit codes: 0 success, 2 usage or configuration problem,
// 3 numerical divergence during training.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gmmc/gmmc.hpp"

namespace fs = std::filesystem;
using gmmc::Vec;

namespace {

std::string comment_line(std::uint64_t hash, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "# config %016llx seed %llu",
                static_cast<unsigned long long>(hash), static_cast<unsigned long long>(seed));
  return buf;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

// Output directory precedence: explicit --out, absolute configured dir,
// $GMMC_OUT_ROOT/<configured dir>, then <config dir>/<configured dir>.
std::string resolve_output_dir(const gmmc::ExperimentConfig& c, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (!c.output_dir.empty() && c.output_dir.front() == '/') return c.output_dir;
  if (const char* root = std::getenv("GMMC_OUT_ROOT"); root && *root)
    return std::string(root) + "/" + c.output_dir;
  return c.base_dir + "/" + c.output_dir;
}

int quantize_byte(double x) {
  long long q = std::llround((x + 1.0) * 127.5);
  if (q < 0) q = 0;
  if (q > 255) q = 255;
  return static_cast<int>(q);
}

// Tile samples into one grayscale image when each sample is a square image.
void write_pgm_grid(const std::vector<Vec>& samples, int side, const std::string& path) {
  const int n = static_cast<int>(samples.size());
  int cols = 1;
  while (cols * cols < n) ++cols;
  const int rows = (n + cols - 1) / cols;
  const int cell = side + 1;  // one-pixel separator
  const int W = cols * cell - 1, H = rows * cell - 1;
  std::vector<unsigned char> img(static_cast<std::size_t>(W) * H, 255);
  for (int i = 0; i < n; ++i) {
    const int r0 = (i / cols) * cell, c0 = (i % cols) * cell;
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        img[static_cast<std::size_t>(r0 + y) * W + (c0 + x)] =
            static_cast<unsigned char>(quantize_byte(samples[static_cast<std::size_t>(i)]
                                                            [static_cast<std::size_t>(y) * side + x]));
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << W << " " << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

int run_means(int classes, int dim, double scale, const std::string& out_path) {
  const gmmc::CentroidSet set = gmmc::generate_opt_means(classes, dim, scale);
  gmmc::save_centroids(set, out_path);
  const auto cos = gmmc::pairwise_cosines(set);
  double lo = 1.0, hi = -1.0;
  for (int i = 0; i < classes; ++i)
    for (int j = 0; j < classes; ++j) {
      if (i == j) continue;
      lo = std::min(lo, cos[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      hi = std::max(hi, cos[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
  std::cout << "wrote " << classes << " centroids of dim " << dim << " scale "
            << gmmc::detail::fmt_g17(scale) << " to " << out_path << "\n";
  std::cout << "pairwise cosines in [" << gmmc::detail::fmt_g17(lo) << ", "
            << gmmc::detail::fmt_g17(hi) << "], target " << gmmc::detail::fmt_g17(-1.0 / (classes - 1))
            << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_override) {
  const gmmc::ExperimentConfig c = gmmc::load_experiment_config(config_path);
  const gmmc::DataBundle data = gmmc::load_data(c);
  gmmc::GmmcModel model = gmmc::build_model(c, data.train.input_dim, data.train.num_classes);
  const std::string out_dir = resolve_output_dir(c, out_override);
  fs::create_directories(out_dir);

  gmmc::save_centroids(model.centroids, out_dir + "/means.txt");

  gmmc::TrainReport partial;
  auto on_epoch = [&](const gmmc::EpochRecord& r) {
    partial.records.push_back(r);
    std::cout << "epoch " << r.epoch << "/" << c.train.epochs << " mode=" << train_mode_name(r.mode)
              << " lr=" << r.lr << " loss=" << r.loss_real;
    if (r.mode != gmmc::TrainMode::Discriminative) std::cout << " loss_sampled=" << r.loss_sampled;
    std::cout << " train_acc=" << r.train_acc << " test_acc=" << r.test_acc << "\n";
  };

  gmmc::ReplayBuffer buffer;
  const std::string csv_path = out_dir + "/train_log.csv";
  try {
    const gmmc::TrainReport report = gmmc::fit(model, data.train, data.test, c.train,
                                               &buffer, on_epoch);
    gmmc::write_train_csv(report, c.config_hash, c.seed, csv_path);
    const gmmc::ReplayBuffer* keep =
        c.train.mode != gmmc::TrainMode::Discriminative ? &buffer : nullptr;
    gmmc::save_checkpoint(model, out_dir + "/checkpoint.gmmc", keep);
    std::cout << "gamma2 " << gmmc::detail::fmt_g17(report.gamma2) << "\n";
    std::cout << "wrote " << csv_path << "\n";
    std::cout << "wrote " << out_dir << "/checkpoint.gmmc\n";
    std::cout << "wrote " << out_dir << "/means.txt\n";
    return 0;
  } catch (const gmmc::TrainingDivergedError& e) {
    // Keep what completed; the diverged parameters are not worth saving.
    gmmc::write_train_csv(partial, c.config_hash, c.seed, csv_path);
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "partial log written to " << csv_path << "\n";
    return 3;
  }
}

int run_sample(const std::string& ckpt_path, int label, int count, const std::string& mode_name,
               int steps, double step_size, double gamma2, std::uint64_t seed,
               const std::string& out_dir) {
  const std::string ckpt_bytes = read_file_bytes(ckpt_path);
  const gmmc::Checkpoint ck = gmmc::checkpoint_from_bytes(ckpt_bytes);
  const gmmc::GmmcModel& m = ck.model;
  if (label < 1 || label > m.centroids.num_classes)
    throw std::invalid_argument("sample: class out of range 1.." +
                                std::to_string(m.centroids.num_classes));
  if (count < 0) throw std::invalid_argument("sample: count must be non-negative");

  gmmc::SamplerConfig cfg;
  cfg.mode = gmmc::sampler_mode_from_name(mode_name);
  cfg.steps = steps;
  cfg.step_size = step_size;
  cfg.gamma2 = gamma2;
  gmmc::validate_sampler_config(cfg);

  fs::create_directories(out_dir);
  std::ofstream csv = open_out(out_dir + "/samples.csv");
  csv << comment_line(gmmc::fnv1a64(ckpt_bytes), seed) << "\n";
  csv << "id,label,diverged,energy";
  const int D = m.spec.input_dim;
  for (int j = 1; j <= D; ++j) csv << ",x" << j;
  csv << "\n";

  gmmc::Rng rng(seed);
  const gmmc::Vec& mu = m.centroids.mean_of(label);
  std::vector<Vec> grid_rows;
  double e0_sum = 0.0, e1_sum = 0.0;
  int ok = 0, diverged = 0;
  for (int i = 0; i < count; ++i) {
    Vec x0(static_cast<std::size_t>(D));
    for (double& v : x0) v = 2.0 * gmmc::uniform01(rng) - 1.0;
    const double e0 = gmmc::sq_dist(gmmc::feature(m, x0), mu) / (2.0 * cfg.gamma2);
    bool died = false;
    Vec x;
    double e1 = std::numeric_limits<double>::quiet_NaN();
    try {
      x = gmmc::run_chain(m, x0, label, cfg, rng);
      e1 = gmmc::sq_dist(gmmc::feature(m, x), mu) / (2.0 * cfg.gamma2);
      e0_sum += e0;
      e1_sum += e1;
      ++ok;
    } catch (const gmmc::DivergedChainError&) {
      died = true;
      ++diverged;
      x = x0;  // report the chain's initialization
    }
    csv << i << ',' << label << ',' << (died ? 1 : 0) << ',' << gmmc::detail::fmt_g17(e1);
    for (double v : x) csv << ',' << gmmc::detail::fmt_g17(v);
    csv << "\n";
    grid_rows.push_back(std::move(x));
  }
  if (!csv) throw std::runtime_error("write failed for " + out_dir + "/samples.csv");
  csv.close();
  std::cout << "sampled " << count << " chains for class " << label << " (" << diverged
            << " diverged)\n";
  if (ok > 0)
    std::cout << "mean energy initial " << e0_sum / ok << " final " << e1_sum / ok << "\n";
  std::cout << "wrote " << out_dir << "/samples.csv\n";

  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(D))));
  if (count > 0 && side > 1 && side * side == D) {
    write_pgm_grid(grid_rows, side, out_dir + "/samples.pgm");
    std::cout << "wrote " << out_dir << "/samples.pgm\n";
  }
  return 0;
}

void eval_calibration(const gmmc::GmmcModel& m, const gmmc::ExperimentConfig& c,
                      const gmmc::LabeledDataset& test, const std::string& out_dir) {
  const gmmc::CalibrationResult res = gmmc::model_calibration(m, test, c.calibration_buckets);
  std::ofstream csv = open_out(out_dir + "/calibration.csv");
  csv << comment_line(c.config_hash, c.seed) << "\n";
  csv << "bucket,lo,hi,count,mean_conf,mean_acc\n";
  const int M = c.calibration_buckets;
  for (int b = 0; b < M; ++b) {
    const auto& bk = res.buckets[static_cast<std::size_t>(b)];
    csv << b << ',' << gmmc::detail::fmt_g17(static_cast<double>(b) / M) << ','
        << gmmc::detail::fmt_g17(static_cast<double>(b + 1) / M) << ',' << bk.count << ','
        << gmmc::detail::fmt_g17(bk.mean_conf) << ',' << gmmc::detail::fmt_g17(bk.mean_acc) << "\n";
  }
  std::cout << "accuracy " << gmmc::accuracy(m, test) << "\n";
  std::cout << "ece " << res.ece << "\n";
  std::cout << "wrote " << out_dir << "/calibration.csv\n";
}

void eval_ood(const gmmc::GmmcModel& m, const gmmc::ExperimentConfig& c,
              const gmmc::LabeledDataset& test, const gmmc::LabeledDataset& ood,
              const std::string& out_dir) {
  const gmmc::OodResult res = gmmc::ood_evaluate(m, test, ood, c.hist_bins);
  std::ofstream csv = open_out(out_dir + "/ood.csv");
  csv << comment_line(c.config_hash, c.seed) << "\n";
  csv << "score,auroc,in_count,out_count\n";
  for (const auto& s : res.scores) {
    csv << s.name << ',' << gmmc::detail::fmt_g17(s.auroc) << ',' << s.in_scores.size() << ','
        << s.out_scores.size() << "\n";
    std::ofstream hist = open_out(out_dir + "/ood_hist_" + s.name + ".csv");
    hist << comment_line(c.config_hash, c.seed) << "\n";
    hist << "bin,lo,hi,in_count,out_count\n";
    const double w = (s.hist.hi - s.hist.lo) / c.hist_bins;
    for (int b = 0; b < c.hist_bins; ++b) {
      hist << b << ',' << gmmc::detail::fmt_g17(s.hist.lo + b * w) << ','
           << gmmc::detail::fmt_g17(s.hist.lo + (b + 1) * w) << ','
           << s.hist.in_counts[static_cast<std::size_t>(b)] << ','
           << s.hist.out_counts[static_cast<std::size_t>(b)] << "\n";
    }
    std::cout << "auroc " << s.name << " " << s.auroc << "\n";
  }
  std::cout << "wrote " << out_dir << "/ood.csv\n";
}

void eval_robustness(const gmmc::GmmcModel& m, const gmmc::ExperimentConfig& c,
                     const gmmc::LabeledDataset& test, const std::string& out_dir) {
  gmmc::Rng attack_rng(c.seed + 3);
  std::ofstream csv = open_out(out_dir + "/robustness.csv");
  csv << comment_line(c.config_hash, c.seed) << "\n";
  csv << "epsilon,robust_acc,examples\n";
  for (double eps : c.epsilons) {
    gmmc::AttackConfig a;
    a.epsilon = eps;
    a.steps = c.attack_steps;
    a.step_size = c.attack_step_size;
    a.random_start = c.random_start;
    const double acc = gmmc::robust_accuracy(m, test, a, c.random_start ? &attack_rng : nullptr);
    csv << gmmc::detail::fmt_g17(eps) << ',' << gmmc::detail::fmt_g17(acc) << ',' << test.size()
        << "\n";
    std::cout << "robust_acc eps=" << eps << " " << acc << "\n";
  }
  std::cout << "wrote " << out_dir << "/robustness.csv\n";

  gmmc::MinL2Config l2;
  l2.max_epsilon = c.l2_max_epsilon;
  l2.halvings = c.l2_halvings;
  l2.attack_steps = c.l2_attack_steps;
  std::ofstream l2csv = open_out(out_dir + "/l2_norms.csv");
  l2csv << comment_line(c.config_hash, c.seed) << "\n";
  l2csv << "id,label,found,norm\n";
  std::vector<double> norms;
  int attempted = 0;
  for (std::size_t i = 0; i < test.size() && attempted < c.l2_examples; ++i) {
    if (gmmc::classify(m, test.xs[i]) != test.labels[i]) continue;
    ++attempted;
    const gmmc::MinL2Result r = gmmc::min_l2_perturbation(m, test.xs[i], test.labels[i], l2);
    l2csv << i << ',' << test.labels[i] << ',' << (r.found ? 1 : 0) << ','
          << gmmc::detail::fmt_g17(r.found ? r.norm : std::numeric_limits<double>::quiet_NaN())
          << "\n";
    if (r.found) norms.push_back(r.norm);
  }
  if (!norms.empty()) {
    std::sort(norms.begin(), norms.end());
    const std::size_t n = norms.size();
    const double median = n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
    std::cout << "min_l2 found " << n << "/" << attempted << " median " << median << "\n";
  } else {
    std::cout << "min_l2 found 0/" << attempted << "\n";
  }
  std::cout << "wrote " << out_dir << "/l2_norms.csv\n";
}

int run_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& suite, const std::string& out_override) {
  const gmmc::ExperimentConfig c = gmmc::load_experiment_config(config_path);
  const gmmc::DataBundle data = gmmc::load_data(c);
  gmmc::Checkpoint ck = gmmc::load_checkpoint(ckpt_path);
  gmmc::GmmcModel& m = ck.model;
  if (data.test.input_dim != m.spec.input_dim)
    throw std::invalid_argument("eval: dataset input_dim does not match the checkpoint");
  if (data.test.num_classes != m.centroids.num_classes)
    throw std::invalid_argument("eval: dataset num_classes does not match the checkpoint");
  if (!m.gamma2) {
    m.gamma2 = gmmc::estimate_gamma2(m, data.train);
    std::cout << "gamma2 estimated from training data: " << *m.gamma2 << "\n";
  }
  const std::string out_dir = resolve_output_dir(c, out_override) + "/eval";
  fs::create_directories(out_dir);

  if (suite == "calibration" || suite == "all") eval_calibration(m, c, data.test, out_dir);
  if (suite == "ood" || suite == "all") {
    if (!data.ood) {
      if (suite == "ood")
        throw std::invalid_argument("eval: ood suite needs held_out classes in the config");
      std::cout << "ood skipped: config holds no classes out\n";
    } else {
      eval_ood(m, c, data.test, *data.ood, out_dir);
    }
  }
  if (suite == "robustness" || suite == "all") eval_robustness(m, c, data.test, out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative Max-Mahalanobis classifier toolkit"};
  app.require_subcommand(1);

  int classes = 0, dim = 0;
  double scale = 10.0;
  std::string means_out;
  CLI::App* means = app.add_subcommand("means", "generate Max-Mahalanobis centroids");
  means->add_option("--classes,-c", classes, "number of classes")->required();
  means->add_option("--dim,-d", dim, "feature dimension")->required();
  means->add_option("--scale,-s", scale, "centroid norm");
  means->add_option("--out,-o", means_out, "output file")->required();

  std::string train_config, train_out;
  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", train_config, "experiment config")->required();
  train->add_option("--out,-o", train_out, "output directory (overrides the config)");

  std::string sm_ckpt, sm_mode = "staged", sm_out = ".";
  int sm_label = 1, sm_count = 16, sm_steps = 20;
  double sm_step = 0.05, sm_gamma2 = 1.0;
  std::uint64_t sm_seed = 1;
  CLI::App* sample = app.add_subcommand("sample", "draw class-conditional samples");
  sample->add_option("--checkpoint", sm_ckpt, "trained checkpoint")->required();
  sample->add_option("--class,-y", sm_label, "1-based class label");
  sample->add_option("--count,-n", sm_count, "number of chains");
  sample->add_option("--mode", sm_mode, "staged | noise_injected | sgld");
  sample->add_option("--steps", sm_steps, "chain length");
  sample->add_option("--step-size", sm_step, "chain step size");
  sample->add_option("--gamma2", sm_gamma2, "sampler gamma^2");
  sample->add_option("--seed", sm_seed, "rng seed");
  sample->add_option("--out,-o", sm_out, "output directory");

  std::string ev_ckpt, ev_config, ev_suite = "all", ev_out;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  eval->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
  eval->add_option("--config,--dataset", ev_config, "experiment config describing the data")
      ->required();
  eval->add_option("--suite", ev_suite, "calibration | ood | robustness | all")
      ->check(CLI::IsMember({"calibration", "ood", "robustness", "all"}));
  eval->add_option("--out,-o", ev_out, "output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (means->parsed()) return run_means(classes, dim, scale, means_out);
    if (train->parsed()) return run_train(train_config, train_out);
    if (sample->parsed())
      return run_sample(sm_ckpt, sm_label, sm_count, sm_mode, sm_steps, sm_step, sm_gamma2,
                        sm_seed, sm_out);
    if (eval->parsed()) return run_eval(ev_ckpt, ev_config, ev_suite, ev_out);
  } catch (const gmmc::TrainingDivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

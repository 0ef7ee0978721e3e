#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetpure/attack.hpp"
#include "hetpure/config.hpp"
#include "hetpure/dataset.hpp"
#include "hetpure/purifier.hpp"

namespace hetpure {

/// Everything one `evaluate` run needs, resolved from the flat config file
/// (CLI flags override file keys before resolution).
struct ExperimentConfig {
  DatasetSpec dataset;
  std::string dataset_dir;  // empty: generate under output_dir/dataset

  int schedule_T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  std::string classifier_path;  // empty: train inline
  int classifier_epochs = 8;
  double classifier_lr = 0.05;
  int classifier_batch = 16;
  std::uint64_t classifier_seed = 11;

  std::string denoiser_path;  // empty: train inline
  int denoiser_epochs = 30;
  double denoiser_lr = 0.003;
  std::uint64_t denoiser_seed = 12;
  int denoiser_w1 = 16, denoiser_w2 = 32;

  PurifyConfig purify;
  std::string purify_mode = "hetero";  // hetero | homog | none
  double t_star_frac = 0.1;            // for homog mode

  bool attack_enabled = true;
  AttackConfig attack;

  int eval_images = 128;
  int repeats = 3;
  std::string output_dir = "out";
  bool timing = true;
  int dump_limit = 8;

  /// Extra settings evaluated alongside the primary one, e.g.
  /// {"homog_tl","homog_ts","none"}.
  std::vector<std::string> baselines;
  std::vector<double> sweep_tau;
  std::vector<std::pair<double, double>> sweep_tlts;
  bool sweep_clean_only = false;  // sweep rows skip the robust side

  static ExperimentConfig from_config(const Config& c);
};

struct MetricsRecord {
  double standard_accuracy = 0.0;
  double standard_accuracy_std = 0.0;
  double robust_accuracy = 0.0;
  double robust_accuracy_std = 0.0;
  double feat_dist_clean = 0.0;
  double feat_dist_adv = 0.0;
  double denoiser_calls_mean = 0.0;
  double wall_seconds = 0.0;
  int repeats = 0;
};

/// End-to-end evaluation: dataset/models resolution, optional attack,
/// per-image fan-out over the worker pool, metrics.csv / details.csv / image
/// dumps / sweep plots under cfg.output_dir. Returns the aggregate of the
/// primary setting.
MetricsRecord run_experiment(const ExperimentConfig& cfg);

}  // namespace hetpure

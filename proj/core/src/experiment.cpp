#include "hetpure/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "hetpure/checkpoint.hpp"
#include "hetpure/csv.hpp"
#include "hetpure/png_io.hpp"
#include "hetpure/report.hpp"
#include "hetpure/threadpool.hpp"

namespace fs = std::filesystem;

namespace hetpure {

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  ExperimentConfig e;
  e.dataset.generator = c.get("dataset.generator", e.dataset.generator);
  e.dataset.image_size = c.get_int("dataset.size", e.dataset.image_size);
  e.dataset.classes = c.get_int("dataset.classes", e.dataset.classes);
  e.dataset.train_per_class = c.get_int("dataset.train_per_class", e.dataset.train_per_class);
  e.dataset.test_per_class = c.get_int("dataset.test_per_class", e.dataset.test_per_class);
  e.dataset.seed = c.get_u64("dataset.seed", e.dataset.seed);
  e.dataset_dir = c.get("dataset.dir", "");

  e.schedule_T = c.get_int("schedule.T", e.schedule_T);
  e.beta_start = c.get_double("schedule.beta_start", e.beta_start);
  e.beta_end = c.get_double("schedule.beta_end", e.beta_end);

  e.classifier_path = c.get("classifier.path", "");
  e.classifier_epochs = c.get_int("classifier.epochs", e.classifier_epochs);
  e.classifier_lr = c.get_double("classifier.lr", e.classifier_lr);
  e.classifier_batch = c.get_int("classifier.batch", e.classifier_batch);
  e.classifier_seed = c.get_u64("classifier.seed", e.classifier_seed);

  e.denoiser_path = c.get("denoiser.path", "");
  e.denoiser_epochs = c.get_int("denoiser.epochs", e.denoiser_epochs);
  e.denoiser_lr = c.get_double("denoiser.lr", e.denoiser_lr);
  e.denoiser_seed = c.get_u64("denoiser.seed", e.denoiser_seed);
  e.denoiser_w1 = c.get_int("denoiser.w1", e.denoiser_w1);
  e.denoiser_w2 = c.get_int("denoiser.w2", e.denoiser_w2);

  e.purify.t_l_frac = c.get_double("purify.t_l", e.purify.t_l_frac);
  e.purify.t_s_frac = c.get_double("purify.t_s", e.purify.t_s_frac);
  e.purify.tau = c.get_double("purify.tau", e.purify.tau);
  e.purify.resample_u = c.get_int("purify.u", e.purify.resample_u);
  e.purify.pool_mode = pool_mode_from_string(c.get("purify.pool", "sum_p"));
  e.purify.pool_p = c.get_int("purify.p", e.purify.pool_p);
  e.purify.ensemble = c.get_int("purify.ensemble", e.purify.ensemble);
  e.purify.rng_seed = c.get_u64("purify.seed", e.purify.rng_seed);
  e.purify.swap_mask_roles = c.get_bool("purify.swap_mask_roles", false);
  e.purify.legacy_resample = c.get_bool("purify.legacy_resample", false);
  e.purify.independent_eps = c.get_bool("purify.independent_eps", false);
  for (double b : c.get_doubles("purify.mask_blocks"))
    e.purify.mask_blocks.push_back(static_cast<int>(b));
  e.purify_mode = c.get("purify.mode", e.purify_mode);
  e.t_star_frac = c.get_double("purify.t_star", e.t_star_frac);

  e.attack_enabled = c.get_bool("attack.enabled", e.attack_enabled);
  e.attack.mode = attack_mode_from_string(c.get("attack.mode", "pgd"));
  e.attack.norm = attack_norm_from_string(c.get("attack.norm", "linf"));
  e.attack.epsilon = c.get_double("attack.eps", e.attack.epsilon);
  e.attack.step_size = c.get_double("attack.step", e.attack.step_size);
  e.attack.iterations = c.get_int("attack.iters", e.attack.iterations);
  e.attack.eot_samples = c.get_int("attack.eot", e.attack.eot_samples);
  e.attack.seed = c.get_u64("attack.seed", e.attack.seed);

  e.eval_images = c.get_int("eval.images", e.eval_images);
  e.repeats = c.get_int("eval.repeats", e.repeats);
  e.output_dir = c.get("eval.output", e.output_dir);
  e.timing = c.get_bool("eval.timing", e.timing);
  e.dump_limit = c.get_int("eval.dump_limit", e.dump_limit);

  {
    std::stringstream ss(c.get("eval.baselines", ""));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) e.baselines.push_back(tok);
  }
  e.sweep_clean_only = c.get_bool("sweep.clean_only", e.sweep_clean_only);
  e.sweep_tau = c.get_doubles("sweep.tau");
  {
    std::stringstream ss(c.get("sweep.tl_ts", ""));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw std::runtime_error("sweep.tl_ts entries must look like 0.2:0.05");
      e.sweep_tlts.emplace_back(std::stod(tok.substr(0, colon)),
                                std::stod(tok.substr(colon + 1)));
    }
  }
  return e;
}

namespace {

struct Setting {
  std::string mode;  // hetero | homog | none
  PurifyConfig pcfg;
  double t_star = 0.0;    // homog only
  std::string label;      // row label
  bool eval_adv = true;   // sweeps may skip the robust side
};

struct ImageOutcome {
  int clean_pred = -1;
  int adv_pred = -1;
  double fd_clean = 0.0;
  double fd_adv = 0.0;
  long calls = 0;
  long runs = 0;
  std::string error;
  Tensor purified_clean;  // kept only for dump rows
  AttentionMask mask;
};

struct EnsembleEval {
  Prediction pred;
  Tensor member0;
  AttentionMask mask;
  long calls = 0;
  long runs = 0;
};

EnsembleEval ensemble_eval(const Tensor& x, const Setting& s,
                           const ClassifierModel& classifier,
                           const DenoiserModel& denoiser,
                           const NoiseSchedule& schedule, std::uint64_t seed) {
  EnsembleEval out;
  int S = s.mode == "none" ? 1 : s.pcfg.ensemble;
  std::vector<double> avg;
  for (int m = 0; m < S; ++m) {
    std::uint64_t run_seed = S == 1 ? seed : mix_seed(seed, kStreamEnsemble + m);
    Tensor purified;
    if (s.mode == "none") {
      purified = x;
    } else if (s.mode == "homog") {
      HomogeneousResult hr = purify_homogeneous(x, denoiser, schedule, s.t_star, run_seed);
      purified = std::move(hr.image);
      out.calls += hr.denoiser_calls;
      out.runs += 1;
    } else {
      PurifyConfig rc = s.pcfg;
      rc.rng_seed = run_seed;
      PurifiedResult pr = purify(x, classifier, denoiser, schedule, rc);
      purified = std::move(pr.image);
      out.calls += pr.denoiser_calls;
      out.runs += 1;
      if (m == 0) out.mask = pr.mask;
    }
    Prediction p = classifier.predict(purified);
    if (avg.empty()) avg.assign(p.probs.size(), 0.0);
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += p.probs[k] / S;
    if (m == 0) out.member0 = std::move(purified);
  }
  out.pred.probs = avg;
  out.pred.logits = avg;
  out.pred.label = 0;
  for (std::size_t k = 1; k < avg.size(); ++k)
    if (avg[k] > avg[out.pred.label]) out.pred.label = static_cast<int>(k);
  return out;
}

std::string cellf(double v) { return format_double(v); }

}  // namespace

MetricsRecord run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);

  // --- dataset -------------------------------------------------------------
  std::string data_dir = cfg.dataset_dir;
  if (data_dir.empty()) {
    data_dir = (fs::path(cfg.output_dir) / "dataset").string();
    if (!fs::exists(fs::path(data_dir) / "index.csv")) make_dataset(cfg.dataset, data_dir);
  }
  Dataset train = load_dataset(data_dir, "train");
  Dataset test = load_dataset(data_dir, "test");
  if (train.empty() || test.empty())
    throw std::runtime_error("run_experiment: empty dataset at " + data_dir);

  NoiseSchedule schedule = build_linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);

  // --- models ----------------------------------------------------------------
  ClassifierModel classifier;
  if (!cfg.classifier_path.empty()) {
    classifier = load_classifier(cfg.classifier_path);
  } else {
    ClassifierConfig cc;
    cc.in_channels = train.front().image.channels;
    cc.image_h = train.front().image.height;
    cc.image_w = train.front().image.width;
    cc.classes = count_classes(train);
    classifier = train_classifier(train, test, cc, cfg.classifier_epochs,
                                  cfg.classifier_lr, cfg.classifier_batch,
                                  cfg.classifier_seed);
    save_classifier((fs::path(cfg.output_dir) / "classifier.ckpt").string(), classifier);
  }

  DenoiserModel denoiser;
  if (!cfg.denoiser_path.empty()) {
    denoiser = load_denoiser(cfg.denoiser_path);
  } else {
    DenoiserNetConfig dc;
    dc.channels = train.front().image.channels;
    dc.image_h = train.front().image.height;
    dc.image_w = train.front().image.width;
    dc.w1 = cfg.denoiser_w1;
    dc.w2 = cfg.denoiser_w2;
    denoiser = train_denoiser(train, schedule, dc, cfg.denoiser_epochs,
                              cfg.denoiser_lr, cfg.denoiser_seed);
    save_denoiser((fs::path(cfg.output_dir) / "denoiser.ckpt").string(), denoiser);
  }

  // --- evaluation subset (class-balanced, deterministic) ---------------------
  int n_eval = std::min<int>(cfg.eval_images, static_cast<int>(test.size()));
  Dataset eval_set = balanced_subset(test, n_eval);

  // --- adversarial examples (fixed across settings and repeats) --------------
  std::vector<Tensor> adv(n_eval);
  if (cfg.attack_enabled) {
    cfg.attack.validate();
    parallel_for(n_eval, [&](int i) {
      AttackConfig ac = cfg.attack;
      ac.seed = mix_seed(cfg.attack.seed, static_cast<std::uint64_t>(i));
      const Tensor& x = eval_set[i].image;
      int y = eval_set[i].label;
      switch (ac.mode) {
        case AttackMode::Fgsm:
          adv[i] = fgsm(x, y, classifier, ac.epsilon);
          break;
        case AttackMode::Pgd:
          adv[i] = pgd(x, [&](const Tensor& p) { return classifier.input_gradient(p, y); }, ac);
          break;
        case AttackMode::BpdaEot: {
          PurifyFn pf = [&](const Tensor& p, std::uint64_t run_seed) {
            PurifyConfig rc = cfg.purify;
            rc.rng_seed = run_seed;
            return purify(p, classifier, denoiser, schedule, rc).image;
          };
          adv[i] = bpda_attack(x, y, pf, classifier, ac);
          break;
        }
        case AttackMode::PgdEotAdaptive:
          adv[i] = adaptive_attack(x, y, classifier, denoiser, schedule, cfg.purify, ac);
          break;
      }
    });
  }

  // --- settings ---------------------------------------------------------------
  std::vector<Setting> settings;
  {
    Setting primary;
    primary.mode = cfg.purify_mode;
    primary.pcfg = cfg.purify;
    primary.t_star = cfg.t_star_frac;
    primary.label = cfg.purify_mode;
    settings.push_back(primary);
    for (const auto& b : cfg.baselines) {
      Setting s;
      s.pcfg = cfg.purify;
      if (b == "homog_tl") {
        s.mode = "homog";
        s.t_star = cfg.purify.t_l_frac;
      } else if (b == "homog_ts") {
        s.mode = "homog";
        s.t_star = cfg.purify.t_s_frac;
      } else if (b == "none") {
        s.mode = "none";
      } else {
        throw std::runtime_error("unknown baseline: " + b);
      }
      s.label = b;
      settings.push_back(s);
    }
    for (double tau : cfg.sweep_tau) {
      Setting s;
      s.mode = "hetero";
      s.pcfg = cfg.purify;
      s.pcfg.tau = tau;
      s.label = "sweep_tau";
      s.eval_adv = !cfg.sweep_clean_only;
      settings.push_back(s);
    }
    for (auto [tl, ts] : cfg.sweep_tlts) {
      Setting s;
      s.mode = "hetero";
      s.pcfg = cfg.purify;
      s.pcfg.t_l_frac = tl;
      s.pcfg.t_s_frac = ts;
      s.label = "sweep_tlts";
      s.eval_adv = !cfg.sweep_clean_only;
      settings.push_back(s);
    }
  }

  // --- metrics / details tables ----------------------------------------------
  CsvTable metrics;
  metrics.header = {"run_id", "seed", "mode", "eps", "norm", "t_l", "t_s",
                    "tau", "U", "S", "standard_acc"};
  if (cfg.attack_enabled) metrics.header.push_back("robust_acc");
  for (const char* c : {"feat_dist_clean", "feat_dist_adv", "denoiser_calls_mean",
                        "wall_seconds"})
    metrics.header.push_back(c);

  CsvTable details;
  details.header = {"setting", "mode", "t_l", "t_s", "tau", "repeat", "image_id",
                    "label", "clean_pred", "adv_pred", "fd_clean", "fd_adv",
                    "denoiser_calls", "error"};

  MetricsRecord primary_record;
  std::vector<double> primary_std_acc, primary_rob_acc;

  int run_id = 0;
  for (std::size_t si = 0; si < settings.size(); ++si) {
    const Setting& s = settings[si];
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      std::uint64_t repeat_seed = mix_seed(cfg.purify.rng_seed, 0xE0ull + rep);
      auto t0 = std::chrono::steady_clock::now();

      std::vector<ImageOutcome> outcomes(n_eval);
      parallel_for(n_eval, [&](int i) {
        ImageOutcome& oc = outcomes[i];
        try {
          std::uint64_t img_seed = mix_seed(repeat_seed, static_cast<std::uint64_t>(i));
          EnsembleEval ce = ensemble_eval(eval_set[i].image, s, classifier,
                                          denoiser, schedule, mix_seed(img_seed, 2));
          oc.clean_pred = ce.pred.label;
          oc.fd_clean = feature_distance(classifier, eval_set[i].image, ce.member0);
          oc.calls += ce.calls;
          oc.runs += ce.runs;
          oc.mask = ce.mask;
          if (si == 0 && rep == 0 && i < cfg.dump_limit)
            oc.purified_clean = ce.member0;
          if (cfg.attack_enabled && s.eval_adv) {
            EnsembleEval ae = ensemble_eval(adv[i], s, classifier, denoiser,
                                            schedule, mix_seed(img_seed, 3));
            oc.adv_pred = ae.pred.label;
            oc.fd_adv = feature_distance(classifier, eval_set[i].image, ae.member0);
            oc.calls += ae.calls;
            oc.runs += ae.runs;
          }
        } catch (const std::exception& ex) {
          oc.error = ex.what();
        }
      });

      double std_acc = 0.0, rob_acc = 0.0, fd_c = 0.0, fd_a = 0.0;
      long calls = 0, runs = 0;
      int valid = 0;
      for (int i = 0; i < n_eval; ++i) {
        const auto& oc = outcomes[i];
        if (oc.error.empty()) {
          ++valid;
          std_acc += oc.clean_pred == eval_set[i].label ? 1.0 : 0.0;
          rob_acc += (cfg.attack_enabled && oc.adv_pred == eval_set[i].label) ? 1.0 : 0.0;
          fd_c += oc.fd_clean;
          fd_a += oc.fd_adv;
          calls += oc.calls;
          runs += oc.runs;
        }
        details.rows.push_back(
            {s.label, s.mode, cellf(s.mode == "homog" ? s.t_star : s.pcfg.t_l_frac),
             s.mode == "hetero" ? cellf(s.pcfg.t_s_frac) : "",
             s.mode == "hetero" ? cellf(s.pcfg.tau) : "", std::to_string(rep),
             std::to_string(i), std::to_string(eval_set[i].label),
             std::to_string(oc.clean_pred),
             cfg.attack_enabled ? std::to_string(oc.adv_pred) : "",
             cellf(oc.fd_clean), cellf(oc.fd_adv), std::to_string(oc.calls),
             oc.error});
      }
      // errored images count against accuracy but keep the denominator
      std_acc /= n_eval;
      rob_acc /= n_eval;
      fd_c /= std::max(valid, 1);
      fd_a /= std::max(valid, 1);
      double calls_mean = runs > 0 ? static_cast<double>(calls) / runs : 0.0;

      auto t1 = std::chrono::steady_clock::now();
      double wall = cfg.timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;

      std::vector<std::string> row = {
          std::to_string(run_id), std::to_string(repeat_seed), s.label,
          cfg.attack_enabled ? cellf(cfg.attack.epsilon) : "",
          cfg.attack_enabled ? to_string(cfg.attack.norm) : "",
          s.mode == "homog" ? cellf(s.t_star) : cellf(s.pcfg.t_l_frac),
          s.mode == "hetero" ? cellf(s.pcfg.t_s_frac) : "",
          s.mode == "hetero" ? cellf(s.pcfg.tau) : "",
          s.mode == "hetero" ? std::to_string(s.pcfg.resample_u) : "",
          s.mode == "none" ? "" : std::to_string(s.pcfg.ensemble),
          cellf(std_acc)};
      if (cfg.attack_enabled) row.push_back(s.eval_adv ? cellf(rob_acc) : "");
      row.push_back(cellf(fd_c));
      row.push_back(s.eval_adv ? cellf(fd_a) : "");
      row.push_back(cellf(calls_mean));
      row.push_back(cellf(wall));
      metrics.rows.push_back(std::move(row));
      ++run_id;

      if (si == 0) {
        primary_std_acc.push_back(std_acc);
        primary_rob_acc.push_back(rob_acc);
        primary_record.feat_dist_clean += fd_c / cfg.repeats;
        primary_record.feat_dist_adv += fd_a / cfg.repeats;
        primary_record.denoiser_calls_mean += calls_mean / cfg.repeats;
        primary_record.wall_seconds += wall;
      }

      // image dumps for the primary setting's first repeat
      if (si == 0 && rep == 0 && cfg.dump_limit > 0) {
        fs::path dump = fs::path(cfg.output_dir) / "dumps";
        fs::create_directories(dump);
        for (int i = 0; i < std::min(cfg.dump_limit, n_eval); ++i) {
          const auto& oc = outcomes[i];
          if (!oc.error.empty()) continue;
          write_png((dump / ("img" + std::to_string(i) + "_clean.png")).string(),
                    eval_set[i].image);
          if (oc.purified_clean.size() > 0)
            write_png((dump / ("img" + std::to_string(i) + "_purified.png")).string(),
                      clamp01(oc.purified_clean));
          if (cfg.attack_enabled)
            write_png((dump / ("img" + std::to_string(i) + "_adv.png")).string(), adv[i]);
          if (s.mode == "hetero" && oc.mask.height > 0) {
            Tensor m(1, oc.mask.height, oc.mask.width);
            for (std::size_t k = 0; k < oc.mask.bits.size(); ++k)
              m.data[k] = oc.mask.bits[k] ? 1.0 : 0.0;
            write_png((dump / ("img" + std::to_string(i) + "_mask.png")).string(), m);
          }
        }
      }
    }
  }

  write_csv((fs::path(cfg.output_dir) / "metrics.csv").string(), metrics);
  write_csv((fs::path(cfg.output_dir) / "details.csv").string(), details);
  write_report(cfg.output_dir);

  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= std::max<std::size_t>(v.size(), 1);
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var = v.size() > 1 ? var / (v.size() - 1) : 0.0;
    return std::make_pair(m, std::sqrt(var));
  };
  auto [sm, ss] = mean_std(primary_std_acc);
  auto [rm, rs] = mean_std(primary_rob_acc);
  primary_record.standard_accuracy = sm;
  primary_record.standard_accuracy_std = ss;
  primary_record.robust_accuracy = rm;
  primary_record.robust_accuracy_std = rs;
  primary_record.repeats = cfg.repeats;
  return primary_record;
}

}  // namespace hetpure

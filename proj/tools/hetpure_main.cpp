// hetpure: attention-guided heterogeneous diffusion purification toolkit.
//
// Subcommands: make-dataset, train-classifier, train-denoiser, mask, attack,
// purify, evaluate, report. File formats: 8-bit PNG for inspection, raw f32
// containers (.f32) for exact image round-trips, versioned .ckpt model files,
// flat key=value config files.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "hetpure/attack.hpp"
#include "hetpure/checkpoint.hpp"
#include "hetpure/config.hpp"
#include "hetpure/csv.hpp"
#include "hetpure/dataset.hpp"
#include "hetpure/experiment.hpp"
#include "hetpure/float_io.hpp"
#include "hetpure/png_io.hpp"
#include "hetpure/purifier.hpp"
#include "hetpure/report.hpp"

namespace fs = std::filesystem;
using namespace hetpure;

namespace {

Tensor load_image(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".f32")
    return read_float_tensor(path);
  return read_png(path);
}

std::vector<std::pair<std::string, int>> list_inputs(const std::string& input) {
  std::vector<std::pair<std::string, int>> files;
  if (fs::is_directory(input)) {
    if (fs::exists(fs::path(input) / "index.csv")) {
      CsvTable index = read_csv((fs::path(input) / "index.csv").string());
      for (std::size_t r = 0; r < index.rows.size(); ++r) {
        if (index.cell(r, "split") != "test") continue;
        files.emplace_back((fs::path(input) / index.cell(r, "path")).string(),
                           std::stoi(index.cell(r, "label")));
      }
    } else {
      std::vector<std::string> paths;
      for (const auto& e : fs::directory_iterator(input)) {
        auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".f32") paths.push_back(e.path().string());
      }
      std::sort(paths.begin(), paths.end());
      for (auto& p : paths) files.emplace_back(p, -1);
    }
  } else {
    files.emplace_back(input, -1);
  }
  return files;
}

Config config_with_overrides(const std::string& config_path,
                             const std::vector<std::string>& sets) {
  Config c = config_path.empty() ? Config() : Config::from_file(config_path);
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got: " + kv);
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-guided heterogeneous diffusion purification"};
  app.require_subcommand(1);

  // ---- make-dataset ---------------------------------------------------------
  auto* mk = app.add_subcommand("make-dataset", "generate the synthetic shape dataset");
  DatasetSpec spec;
  std::string out_dir = "dataset";
  mk->add_option("--generator", spec.generator);
  mk->add_option("--size", spec.image_size);
  mk->add_option("--classes", spec.classes);
  mk->add_option("--train-per-class", spec.train_per_class);
  mk->add_option("--test-per-class", spec.test_per_class);
  mk->add_option("--seed", spec.seed);
  mk->add_option("--output", out_dir)->required();

  // ---- train-classifier -------------------------------------------------------
  auto* tc = app.add_subcommand("train-classifier", "train the toy block classifier");
  std::string tc_data, tc_out = "classifier.ckpt";
  int tc_epochs = 8, tc_batch = 16;
  double tc_lr = 0.05;
  std::uint64_t tc_seed = 11;
  tc->add_option("--dataset", tc_data)->required();
  tc->add_option("--output", tc_out);
  tc->add_option("--epochs", tc_epochs);
  tc->add_option("--lr", tc_lr);
  tc->add_option("--batch", tc_batch);
  tc->add_option("--seed", tc_seed);

  // ---- train-denoiser ---------------------------------------------------------
  auto* td = app.add_subcommand("train-denoiser", "train the toy epsilon predictor");
  std::string td_data, td_out = "denoiser.ckpt";
  int td_epochs = 30, td_T = 1000, td_w1 = 16, td_w2 = 32;
  double td_lr = 0.003, td_b0 = 1e-4, td_b1 = 0.02;
  std::uint64_t td_seed = 12;
  td->add_option("--dataset", td_data)->required();
  td->add_option("--output", td_out);
  td->add_option("--epochs", td_epochs);
  td->add_option("--lr", td_lr);
  td->add_option("--seed", td_seed);
  td->add_option("--schedule-T", td_T);
  td->add_option("--beta-start", td_b0);
  td->add_option("--beta-end", td_b1);
  td->add_option("--w1", td_w1);
  td->add_option("--w2", td_w2);

  // ---- mask -----------------------------------------------------------------
  auto* mask_cmd = app.add_subcommand("mask", "build the attention mask for an image");
  std::string mask_input, mask_ckpt, mask_out = "mask.png", mask_pool = "sum_p";
  double mask_tau = 0.8;
  int mask_p = 2;
  bool mask_dump_maps = false;
  mask_cmd->add_option("input", mask_input)->required();
  mask_cmd->add_option("--classifier", mask_ckpt)->required();
  mask_cmd->add_option("--tau", mask_tau);
  mask_cmd->add_option("--pool", mask_pool)->check(CLI::IsMember({"sum", "sum_p", "max_p"}));
  mask_cmd->add_option("--p", mask_p);
  mask_cmd->add_option("--output", mask_out);
  mask_cmd->add_flag("--dump-maps", mask_dump_maps, "also write per-block map PNGs");

  // ---- attack ----------------------------------------------------------------
  auto* atk = app.add_subcommand("attack", "generate adversarial examples");
  std::string atk_input, atk_out = "attacked", atk_mode = "pgd", atk_norm = "linf";
  std::string atk_classifier, atk_denoiser, atk_config;
  double atk_eps = 8.0 / 255.0, atk_step = 0.007;
  int atk_iters = 40, atk_eot = 1;
  std::uint64_t atk_seed = 5;
  atk->add_option("--input", atk_input)->required();
  atk->add_option("--classifier", atk_classifier)->required();
  atk->add_option("--denoiser", atk_denoiser, "needed for bpda_eot/adaptive modes");
  atk->add_option("--config", atk_config, "purifier config for defense-aware modes");
  atk->add_option("--mode", atk_mode)
      ->check(CLI::IsMember({"fgsm", "pgd", "bpda_eot", "adaptive"}));
  atk->add_option("--norm", atk_norm)->check(CLI::IsMember({"linf", "l2"}));
  atk->add_option("--eps", atk_eps);
  atk->add_option("--step", atk_step);
  atk->add_option("--iters", atk_iters);
  atk->add_option("--eot", atk_eot);
  atk->add_option("--seed", atk_seed);
  atk->add_option("--output", atk_out);

  // ---- purify ----------------------------------------------------------------
  auto* pur = app.add_subcommand("purify", "purify images through the heterogeneous pipeline");
  std::string pur_input, pur_classifier, pur_denoiser, pur_out = "purified";
  double pur_tl = 0.2, pur_ts = 0.05, pur_tau = 0.8;
  int pur_u = 10, pur_s = 1, pur_T = 1000;
  double pur_b0 = 1e-4, pur_b1 = 0.02;
  std::uint64_t pur_seed = 7;
  bool pur_swap = false, pur_legacy = false;
  pur->add_option("--input", pur_input)->required();
  pur->add_option("--classifier", pur_classifier)->required();
  pur->add_option("--denoiser", pur_denoiser)->required();
  pur->add_option("--t-l", pur_tl);
  pur->add_option("--t-s", pur_ts);
  pur->add_option("--tau", pur_tau);
  pur->add_option("--resample-U", pur_u);
  pur->add_option("--ensemble-S", pur_s);
  pur->add_option("--seed", pur_seed);
  pur->add_option("--schedule-T", pur_T);
  pur->add_option("--beta-start", pur_b0);
  pur->add_option("--beta-end", pur_b1);
  pur->add_flag("--swap-mask-roles", pur_swap);
  pur->add_flag("--legacy-resample", pur_legacy);
  pur->add_option("--output", pur_out);

  // ---- evaluate ----------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "run the end-to-end experiment");
  std::string ev_config;
  std::vector<std::string> ev_sets;
  bool ev_no_timing = false;
  ev->add_option("--config", ev_config, "flat key=value config file");
  ev->add_option("--set", ev_sets, "override config keys, key=value")->take_all();
  ev->add_flag("--no-timing", ev_no_timing,
               "write wall_seconds as 0 for byte-reproducible metrics.csv");

  // ---- report ----------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "aggregate metrics and render plots");
  std::string rep_dir;
  rep->add_option("dir", rep_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mk) {
      make_dataset(spec, out_dir);
      std::cout << "dataset written to " << out_dir << "\n";
    } else if (*tc) {
      Dataset train = load_dataset(tc_data, "train");
      Dataset test = load_dataset(tc_data, "test");
      ClassifierConfig cc;
      cc.in_channels = train.front().image.channels;
      cc.image_h = train.front().image.height;
      cc.image_w = train.front().image.width;
      cc.classes = count_classes(train);
      TrainReport report;
      ClassifierModel model = train_classifier(train, test, cc, tc_epochs, tc_lr,
                                               tc_batch, tc_seed, &report);
      save_classifier(tc_out, model);
      std::cout << "train acc " << report.train_accuracy << ", val acc "
                << report.val_accuracy << ", saved " << tc_out << "\n";
    } else if (*td) {
      Dataset train = load_dataset(td_data, "train");
      NoiseSchedule schedule = build_linear_schedule(td_T, td_b0, td_b1);
      DenoiserNetConfig dc;
      dc.channels = train.front().image.channels;
      dc.image_h = train.front().image.height;
      dc.image_w = train.front().image.width;
      dc.w1 = td_w1;
      dc.w2 = td_w2;
      DenoiserTrainReport report;
      DenoiserModel model =
          train_denoiser(train, schedule, dc, td_epochs, td_lr, td_seed, &report);
      save_denoiser(td_out, model);
      std::cout << "final dsm loss " << report.final_loss << ", saved " << td_out << "\n";
    } else if (*mask_cmd) {
      Tensor img = load_image(mask_input);
      ClassifierModel model = load_classifier(mask_ckpt);
      auto [pred, stack] = model.forward_with_activations(img);
      auto maps = attention_maps_for_stack(stack, img.height, img.width,
                                           pool_mode_from_string(mask_pool), mask_p);
      AttentionMask m = build_mask(maps, mask_tau);
      Tensor vis(1, m.height, m.width);
      for (std::size_t i = 0; i < m.bits.size(); ++i) vis.data[i] = m.bits[i] ? 1.0 : 0.0;
      write_png(mask_out, vis);
      if (mask_dump_maps) {
        for (std::size_t b = 0; b < maps.size(); ++b) {
          Tensor mv(1, maps[b].height, maps[b].width);
          double hi = *std::max_element(maps[b].values.begin(), maps[b].values.end());
          for (std::size_t i = 0; i < mv.data.size(); ++i)
            mv.data[i] = hi > 0 ? maps[b].values[i] / hi : 0.0;
          auto stem = fs::path(mask_out).stem().string();
          auto dir = fs::path(mask_out).parent_path();
          write_png((dir / (stem + "_block" + std::to_string(b) + ".png")).string(), mv);
        }
      }
      std::cout << "predicted class " << pred.label << ", mask area " << m.area()
                << "/" << m.bits.size() << ", saved " << mask_out << "\n";
    } else if (*atk) {
      ClassifierModel classifier = load_classifier(atk_classifier);
      AttackConfig ac;
      ac.mode = attack_mode_from_string(atk_mode);
      ac.norm = attack_norm_from_string(atk_norm);
      ac.epsilon = atk_eps;
      ac.step_size = atk_step;
      ac.iterations = atk_iters;
      ac.eot_samples = atk_eot;
      ac.seed = atk_seed;

      DenoiserModel denoiser;
      NoiseSchedule schedule = build_linear_schedule(1000, 1e-4, 0.02);
      PurifyConfig pcfg;
      bool defense_aware = ac.mode == AttackMode::BpdaEot || ac.mode == AttackMode::PgdEotAdaptive;
      if (defense_aware) {
        if (atk_denoiser.empty())
          throw std::runtime_error("attack: --denoiser required for defense-aware modes");
        denoiser = load_denoiser(atk_denoiser);
        if (!atk_config.empty()) {
          Config c = Config::from_file(atk_config);
          ExperimentConfig e = ExperimentConfig::from_config(c);
          pcfg = e.purify;
          schedule = build_linear_schedule(e.schedule_T, e.beta_start, e.beta_end);
        }
      }

      fs::create_directories(atk_out);
      CsvTable manifest;
      manifest.header = {"path", "clean_label", "adv_label", "perturbation_norm"};
      auto files = list_inputs(atk_input);
      int idx = 0;
      for (const auto& [path, label] : files) {
        Tensor x = load_image(path);
        int y = label >= 0 ? label : classifier.predict(x).label;
        AttackConfig per = ac;
        per.seed = mix_seed(ac.seed, static_cast<std::uint64_t>(idx));
        Tensor x_adv;
        switch (per.mode) {
          case AttackMode::Fgsm: x_adv = fgsm(x, y, classifier, per.epsilon); break;
          case AttackMode::Pgd:
            x_adv = pgd(x, [&](const Tensor& p) { return classifier.input_gradient(p, y); }, per);
            break;
          case AttackMode::BpdaEot: {
            PurifyFn pf = [&](const Tensor& p, std::uint64_t run_seed) {
              PurifyConfig rc = pcfg;
              rc.rng_seed = run_seed;
              return purify(p, classifier, denoiser, schedule, rc).image;
            };
            x_adv = bpda_attack(x, y, pf, classifier, per);
            break;
          }
          case AttackMode::PgdEotAdaptive:
            x_adv = adaptive_attack(x, y, classifier, denoiser, schedule, pcfg, per);
            break;
        }
        std::string rel = "adv_" + std::to_string(idx) + ".f32";
        write_float_tensor((fs::path(atk_out) / rel).string(), x_adv);
        if (idx < 8)
          write_png((fs::path(atk_out) / ("adv_" + std::to_string(idx) + ".png")).string(), x_adv);
        Tensor delta = add_scaled(x_adv, -1.0, x);
        double pert = ac.norm == AttackNorm::Linf ? linf_norm(delta) : l2_norm(delta);
        manifest.rows.push_back({rel, std::to_string(y),
                                 std::to_string(classifier.predict(x_adv).label),
                                 format_double(pert)});
        ++idx;
      }
      write_csv((fs::path(atk_out) / "manifest.csv").string(), manifest);
      std::cout << "attacked " << idx << " images, manifest at " << atk_out << "\n";
    } else if (*pur) {
      ClassifierModel classifier = load_classifier(pur_classifier);
      DenoiserModel denoiser = load_denoiser(pur_denoiser);
      NoiseSchedule schedule = build_linear_schedule(pur_T, pur_b0, pur_b1);
      PurifyConfig pcfg;
      pcfg.t_l_frac = pur_tl;
      pcfg.t_s_frac = pur_ts;
      pcfg.tau = pur_tau;
      pcfg.resample_u = pur_u;
      pcfg.ensemble = pur_s;
      pcfg.rng_seed = pur_seed;
      pcfg.swap_mask_roles = pur_swap;
      pcfg.legacy_resample = pur_legacy;

      fs::create_directories(pur_out);
      CsvTable record;
      record.header = {"path", "label", "purified_label", "denoiser_calls"};
      auto files = list_inputs(pur_input);
      int idx = 0;
      for (const auto& [path, label] : files) {
        Tensor x = load_image(path);
        PurifyConfig rc = pcfg;
        rc.rng_seed = mix_seed(pur_seed, static_cast<std::uint64_t>(idx));
        PurifiedResult res = purify(x, classifier, denoiser, schedule, rc);
        long calls = res.denoiser_calls;
        Prediction pred;
        if (pur_s > 1) {
          long total = 0;
          pred = ensemble_classify(x, classifier, denoiser, schedule, rc, &total);
          calls = total;
        } else {
          pred = classifier.predict(res.image);
        }
        std::string stem = "img_" + std::to_string(idx);
        write_png((fs::path(pur_out) / (stem + "_purified.png")).string(),
                  clamp01(res.image));
        Tensor mv(1, res.mask.height, res.mask.width);
        for (std::size_t i = 0; i < res.mask.bits.size(); ++i)
          mv.data[i] = res.mask.bits[i] ? 1.0 : 0.0;
        write_png((fs::path(pur_out) / (stem + "_mask.png")).string(), mv);
        record.rows.push_back({path, std::to_string(label), std::to_string(pred.label),
                               std::to_string(calls)});
        ++idx;
      }
      write_csv((fs::path(pur_out) / "purify.csv").string(), record);
      std::cout << "purified " << idx << " images into " << pur_out << "\n";
    } else if (*ev) {
      Config c = config_with_overrides(ev_config, ev_sets);
      if (ev_no_timing) c.set("eval.timing", "false");
      ExperimentConfig ecfg = ExperimentConfig::from_config(c);
      MetricsRecord rec = run_experiment(ecfg);
      std::cout << "standard acc " << rec.standard_accuracy << " +/- "
                << rec.standard_accuracy_std;
      if (ecfg.attack_enabled)
        std::cout << ", robust acc " << rec.robust_accuracy << " +/- "
                  << rec.robust_accuracy_std;
      std::cout << ", mean denoiser calls " << rec.denoiser_calls_mean << "\n"
                << "outputs in " << ecfg.output_dir << "\n";
    } else if (*rep) {
      write_report(rep_dir);
      std::cout << "report written to " << rep_dir << "\n";
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hetpure/checkpoint.hpp"
#include "hetpure/config.hpp"
#include "hetpure/csv.hpp"
#include "hetpure/dataset.hpp"
#include "hetpure/experiment.hpp"
#include "hetpure/float_io.hpp"
#include "hetpure/png_io.hpp"
#include "hetpure/report.hpp"

namespace fs = std::filesystem;
using namespace hetpure;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hetpure_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parsing, overrides, errors") {
  Config c = Config::from_string(
      "# comment line\n"
      "schedule.T = 500\n"
      "purify.tau = 0.75   # trailing comment\n"
      "eval.output = out/dir\n"
      "flag.on = true\n"
      "schedule.T = 600\n");
  CHECK(c.get_int("schedule.T", 0) == 600);  // later key wins
  CHECK(c.get_double("purify.tau", 0) == doctest::Approx(0.75));
  CHECK(c.get("eval.output", "") == "out/dir");
  CHECK(c.get_bool("flag.on", false));
  CHECK(c.get_int("missing", 42) == 42);
  CHECK_THROWS(Config::from_string("not a key value line\n"));
  CHECK_THROWS(c.require("missing"));
  c.set("purify.tau", "0.9");
  CHECK(c.get_double("purify.tau", 0) == doctest::Approx(0.9));
}

TEST_CASE("csv round trip and malformed-row diagnostics") {
  auto dir = temp_dir("csv");
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", "y"}};
  write_csv((dir / "t.csv").string(), t);
  CsvTable r = read_csv((dir / "t.csv").string());
  CHECK(r.header == t.header);
  CHECK(r.rows == t.rows);
  CHECK(r.cell(1, "b") == "y");

  std::ofstream bad(dir / "bad.csv");
  bad << "a,b\n1,2\nonly-one-field\n";
  bad.close();
  try {
    read_csv((dir / "bad.csv").string());
    FAIL("expected malformed csv to throw");
  } catch (const std::exception& ex) {
    CHECK(std::string(ex.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("png writes are deterministic and round-trip at 8 bits") {
  auto dir = temp_dir("png");
  Rng rng(5);
  Tensor img(1, 16, 16);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);

  write_png((dir / "a.png").string(), img);
  write_png((dir / "b.png").string(), img);
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));

  Tensor back = read_png((dir / "a.png").string());
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double quantised = std::round(img.data[i] * 255.0) / 255.0;
    CHECK(back.data[i] == doctest::Approx(quantised).epsilon(1e-12));
  }

  Tensor rgb(3, 8, 8);
  Rng rng2(6);
  for (double& v : rgb.data) v = rng2.uniform(0.0, 1.0);
  write_png((dir / "rgb.png").string(), rgb);
  Tensor rgb_back = read_png((dir / "rgb.png").string());
  CHECK(rgb_back.channels == 3);
  for (std::size_t i = 0; i < rgb.data.size(); ++i)
    CHECK(rgb_back.data[i] ==
          doctest::Approx(std::round(rgb.data[i] * 255.0) / 255.0).epsilon(1e-12));
}

TEST_CASE("float container round-trips exactly at f32") {
  auto dir = temp_dir("f32");
  Rng rng(7);
  Tensor t(2, 3, 5);
  rng.fill_normal(t);
  write_float_tensor((dir / "t.f32").string(), t);
  Tensor back = read_float_tensor((dir / "t.f32").string());
  REQUIRE(back.same_shape(t));
  for (std::size_t i = 0; i < t.data.size(); ++i)
    CHECK(back.data[i] == static_cast<double>(static_cast<float>(t.data[i])));
  // second round trip is exact
  write_float_tensor((dir / "t2.f32").string(), back);
  Tensor back2 = read_float_tensor((dir / "t2.f32").string());
  CHECK(back2.data == back.data);
  CHECK_THROWS(read_float_tensor((dir / "missing.f32").string()));
}

TEST_CASE("checkpoints restore models exactly at f32 precision") {
  auto dir = temp_dir("ckpt");

  ClassifierConfig cc;
  cc.in_channels = 1;
  cc.image_h = 8;
  cc.image_w = 8;
  cc.widths = {4, 6};
  cc.classes = 3;
  ClassifierModel cls = ClassifierModel::initialized(cc, 5);
  save_classifier((dir / "c.ckpt").string(), cls);
  ClassifierModel cls2 = load_classifier((dir / "c.ckpt").string());
  CHECK(cls2.config().descriptor() == cc.descriptor());
  // saved-loaded-saved files are byte-identical (f32 fixpoint)
  save_classifier((dir / "c2.ckpt").string(), cls2);
  CHECK(slurp(dir / "c.ckpt") == slurp(dir / "c2.ckpt"));

  DenoiserNetConfig dc;
  dc.channels = 1;
  dc.image_h = 8;
  dc.image_w = 8;
  dc.w1 = 4;
  dc.w2 = 6;
  dc.temb_dim = 8;
  DenoiserModel den = DenoiserModel::learned(dc, 6);
  save_denoiser((dir / "d.ckpt").string(), den);
  DenoiserModel den2 = load_denoiser((dir / "d.ckpt").string());
  NoiseSchedule s = build_linear_schedule(10, 1e-3, 0.1);
  Rng rng(8);
  Tensor x(1, 8, 8);
  rng.fill_normal(x);
  Tensor e2 = den2.predict_eps(x, 5, s);
  save_denoiser((dir / "d2.ckpt").string(), den2);
  CHECK(slurp(dir / "d.ckpt") == slurp(dir / "d2.ckpt"));
  CHECK(e2.all_finite());

  // wrong-family load fails loudly
  CHECK_THROWS(load_denoiser((dir / "c.ckpt").string()));
  CHECK_THROWS(load_classifier((dir / "d.ckpt").string()));
}

TEST_CASE("dataset generation: determinism, counting, separability") {
  auto dir_a = temp_dir("data_a");
  auto dir_b = temp_dir("data_b");
  DatasetSpec spec;
  spec.classes = 2;
  spec.train_per_class = 30;
  spec.test_per_class = 10;
  spec.seed = 9;
  make_dataset(spec, dir_a.string());
  make_dataset(spec, dir_b.string());

  CsvTable index = read_csv((dir_a / "index.csv").string());
  CHECK(index.rows.size() == 2 * (30 + 10));
  int pngs = 0;
  for (auto& e : fs::recursive_directory_iterator(dir_a))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 2 * (30 + 10));

  // byte-identical across runs
  for (std::size_t r = 0; r < index.rows.size(); ++r) {
    auto rel = index.cell(r, "path");
    CHECK(slurp(dir_a / rel) == slurp(dir_b / rel));
  }

  // pixel-mean threshold oracle reaches 90% on the train split
  Dataset train = load_dataset(dir_a.string(), "train");
  std::vector<std::pair<double, int>> means;
  for (const auto& s : train) {
    double m = 0;
    for (double v : s.image.data) m += v;
    means.emplace_back(m / s.image.data.size(), s.label);
  }
  double best = 0;
  for (const auto& [thr, lab] : means) {
    (void)lab;
    int ok = 0;
    for (const auto& [m, l] : means) ok += ((m > thr) == (l == 1)) ? 1 : 0;
    best = std::max(best, static_cast<double>(ok) / means.size());
  }
  CHECK(best >= 0.90);

  CHECK_THROWS(load_dataset((dir_a / "nope").string(), "train"));
  DatasetSpec bad = spec;
  bad.classes = 9;
  CHECK_THROWS_AS(make_dataset(bad, dir_a.string()), std::invalid_argument);
}

TEST_CASE("generate_split matches files written by make_dataset") {
  auto dir = temp_dir("data_mem");
  DatasetSpec spec;
  spec.classes = 2;
  spec.train_per_class = 6;
  spec.test_per_class = 4;
  spec.seed = 13;
  make_dataset(spec, dir.string());
  Dataset from_files = load_dataset(dir.string(), "test");
  Dataset from_mem = generate_split(spec, "test");
  REQUIRE(from_files.size() == from_mem.size());
  for (std::size_t i = 0; i < from_mem.size(); ++i) {
    CHECK(from_files[i].label == from_mem[i].label);
    // files are 8-bit quantised versions of the in-memory draws
    for (std::size_t k = 0; k < from_mem[i].image.data.size(); ++k)
      CHECK(from_files[i].image.data[k] ==
            doctest::Approx(std::round(from_mem[i].image.data[k] * 255.0) / 255.0)
                .epsilon(1e-12));
  }
}

TEST_CASE("experiment end to end on a tiny configuration") {
  auto dir = temp_dir("exp");
  Config c = Config::from_string(
      "dataset.classes = 2\n"
      "dataset.train_per_class = 24\n"
      "dataset.test_per_class = 8\n"
      "dataset.seed = 3\n"
      "schedule.T = 40\n"
      "schedule.beta_start = 0.001\n"
      "schedule.beta_end = 0.15\n"
      "classifier.epochs = 6\n"
      "classifier.lr = 0.08\n"
      "classifier.batch = 8\n"
      "denoiser.epochs = 2\n"
      "denoiser.w1 = 4\n"
      "denoiser.w2 = 6\n"
      "purify.t_l = 0.3\n"
      "purify.t_s = 0.1\n"
      "purify.u = 2\n"
      "purify.seed = 21\n"
      "attack.enabled = true\n"
      "attack.mode = pgd\n"
      "attack.iters = 5\n"
      "eval.images = 6\n"
      "eval.repeats = 2\n"
      "eval.timing = false\n"
      "eval.dump_limit = 2\n");
  c.set("eval.output", (dir / "run").string());
  c.set("eval.baselines", "none");
  ExperimentConfig ecfg = ExperimentConfig::from_config(c);
  MetricsRecord rec = run_experiment(ecfg);
  CHECK(rec.repeats == 2);
  CHECK(rec.standard_accuracy >= 0.0);
  CHECK(rec.standard_accuracy <= 1.0);

  CsvTable metrics = read_csv((dir / "run" / "metrics.csv").string());
  CHECK(metrics.column("robust_acc") >= 0);
  CHECK(metrics.rows.size() == 4);  // (hetero + none) x 2 repeats

  // identity baseline: standard accuracy equals classifier accuracy on the
  // eval subset, and is identical across repeats
  Dataset test = load_dataset((dir / "run" / "dataset").string(), "test");
  Dataset eval_subset = balanced_subset(test, 6);
  ClassifierModel cls = load_classifier((dir / "run" / "classifier.ckpt").string());
  double direct = cls.accuracy(eval_subset);
  int none_rows = 0;
  for (std::size_t r = 0; r < metrics.rows.size(); ++r) {
    if (metrics.cell(r, "mode") != "none") continue;
    ++none_rows;
    CHECK(std::stod(metrics.cell(r, "standard_acc")) == doctest::Approx(direct));
    CHECK(metrics.cell(r, "denoiser_calls_mean") == "0.000000");
  }
  CHECK(none_rows == 2);

  // accounting identity: per-run calls match the closed-form formula
  NoiseSchedule s = build_linear_schedule(40, 0.001, 0.15);
  long formula = expected_denoiser_calls(step_of_fraction(s, 0.3),
                                         step_of_fraction(s, 0.1), 2, false);
  for (std::size_t r = 0; r < metrics.rows.size(); ++r)
    if (metrics.cell(r, "mode") == "hetero")
      CHECK(std::stod(metrics.cell(r, "denoiser_calls_mean")) ==
            doctest::Approx(static_cast<double>(formula)));

  CHECK(fs::exists(dir / "run" / "details.csv"));
  CHECK(fs::exists(dir / "run" / "summary.csv"));
  CHECK(fs::exists(dir / "run" / "accuracy_bars.svg"));
  CHECK(fs::exists(dir / "run" / "dumps" / "img0_clean.png"));

  // byte-identical reruns with timing off
  std::string first = slurp(dir / "run" / "metrics.csv");
  run_experiment(ecfg);
  CHECK(slurp(dir / "run" / "metrics.csv") == first);
}

TEST_CASE("experiment without attack omits the robust column") {
  auto dir = temp_dir("exp_noatk");
  Config c = Config::from_string(
      "dataset.classes = 2\n"
      "dataset.train_per_class = 16\n"
      "dataset.test_per_class = 6\n"
      "schedule.T = 30\n"
      "schedule.beta_start = 0.001\n"
      "schedule.beta_end = 0.15\n"
      "classifier.epochs = 2\n"
      "denoiser.epochs = 1\n"
      "denoiser.w1 = 4\n"
      "denoiser.w2 = 6\n"
      "purify.t_l = 0.3\n"
      "purify.t_s = 0.1\n"
      "purify.u = 1\n"
      "attack.enabled = false\n"
      "eval.images = 4\n"
      "eval.repeats = 1\n"
      "eval.timing = false\n"
      "eval.dump_limit = 0\n");
  c.set("eval.output", (dir / "run").string());
  run_experiment(ExperimentConfig::from_config(c));
  CsvTable metrics = read_csv((dir / "run" / "metrics.csv").string());
  CHECK(metrics.column("robust_acc") < 0);
  CHECK(metrics.column("standard_acc") >= 0);
}

TEST_CASE("report aggregates repeats into mean and std") {
  auto dir = temp_dir("report");
  CsvTable metrics;
  metrics.header = {"run_id", "seed", "mode", "eps", "norm", "t_l", "t_s", "tau",
                    "U", "S", "standard_acc", "robust_acc", "feat_dist_clean",
                    "feat_dist_adv", "denoiser_calls_mean", "wall_seconds"};
  auto row = [&](int id, const std::string& acc, const std::string& rob) {
    metrics.rows.push_back({std::to_string(id), "1", "hetero", "0.031", "linf",
                            "0.2", "0.05", "0.8", "10", "1", acc, rob, "0.5",
                            "0.7", "351", "0"});
  };
  row(0, "0.90", "0.60");
  row(1, "0.80", "0.50");
  row(2, "0.70", "0.40");
  metrics.rows.push_back({"3", "1", "sweep_tlts", "0.031", "linf", "0.3", "0.1",
                          "0.8", "10", "1", "0.75", "0.55", "0.4", "0.6", "451",
                          "0"});
  write_csv((dir / "metrics.csv").string(), metrics);
  write_report(dir.string());

  CsvTable summary = read_csv((dir / "summary.csv").string());
  REQUIRE(summary.rows.size() == 2);  // hetero group + the tlts sweep point
  std::size_t het = summary.cell(0, "setting") == "hetero" ? 0 : 1;
  // hand aggregation: mean 0.8, sample std 0.1
  CHECK(std::stod(summary.cell(het, "standard_acc_mean")) == doctest::Approx(0.8));
  CHECK(std::stod(summary.cell(het, "standard_acc_std")) == doctest::Approx(0.1));
  CHECK(std::stod(summary.cell(het, "robust_acc_mean")) == doctest::Approx(0.5));
  CHECK(std::stod(summary.cell(het, "repeats")) == 3);
  CHECK(fs::exists(dir / "calls_comparison.svg"));
  CHECK(fs::exists(dir / "tlts_heatmap.svg"));

  // single repeat: zero std
  auto dir2 = temp_dir("report_single");
  CsvTable one;
  one.header = metrics.header;
  one.rows.push_back(metrics.rows[0]);
  write_csv((dir2 / "metrics.csv").string(), one);
  write_report(dir2.string());
  CsvTable s2 = read_csv((dir2 / "summary.csv").string());
  CHECK(std::stod(s2.cell(0, "standard_acc_std")) == doctest::Approx(0.0));
}

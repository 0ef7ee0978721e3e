#include "hetpure/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "hetpure/csv.hpp"
#include "hetpure/png_io.hpp"

namespace fs = std::filesystem;

namespace hetpure {

void DatasetSpec::validate() const {
  if (generator != "shapes-easy")
    throw std::invalid_argument("DatasetSpec: unknown generator " + generator);
  if (image_size != 16 && image_size != 32)
    throw std::invalid_argument("DatasetSpec: image_size must be 16 or 32");
  if (classes < 2 || classes > 4)
    throw std::invalid_argument("DatasetSpec: classes must be in [2,4]");
  if (train_per_class < 1 || test_per_class < 1)
    throw std::invalid_argument("DatasetSpec: sample counts must be positive");
}

namespace {

// The label is carried by the foreground brightness; the shape itself is a
// nuisance drawn at random from equal-area templates. Class pixel-mean gaps
// land a few sigma above the background-noise spread (so a mean threshold
// separates) yet inside the 8/255 attack budget (so gradient attacks can
// cross them), and a brightness level smothered by t_l-grade noise cannot be
// read back out, which is what gives masked inpainting a real cost.
constexpr double kBackgroundLevel = 0.10;

double class_brightness(int label) { return 0.42 + 0.06 * label; }

void paint_disk(Tensor& img, int cy, int cx, double r, double v) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) img.at(0, y, x) = v;
}

void paint_box(Tensor& img, int cy, int cx, int half, double v) {
  for (int y = cy - half; y <= cy + half; ++y)
    for (int x = cx - half; x <= cx + half; ++x) img.at(0, y, x) = v;
}

void paint_diamond(Tensor& img, int cy, int cx, int r, double v) {
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x)
      if (std::abs(y - cy) + std::abs(x - cx) <= r) img.at(0, y, x) = v;
}

}  // namespace

Tensor render_shape_image(const DatasetSpec& spec, int label, Rng& rng) {
  const int n = spec.image_size;
  const int scale = n / 16;
  Tensor img(1, n, n);
  for (double& v : img.data) v = rng.uniform(0.0, kBackgroundLevel);

  double fg = class_brightness(label) + rng.uniform(-0.015, 0.015);
  // jitter the centre but keep the shape fully inside so its area is constant
  int margin = 4 * scale;
  int cy = margin + static_cast<int>(rng.next_below(n - 2 * margin + 1));
  int cx = margin + static_cast<int>(rng.next_below(n - 2 * margin + 1));

  // equal-area templates (25 cells at 16x16) so the shape carries no label
  switch (rng.next_below(3)) {
    case 0: paint_disk(img, cy, cx, 2.9 * scale, fg); break;
    case 1: paint_box(img, cy, cx, 2 * scale, fg); break;
    default: paint_diamond(img, cy, cx, 3 * scale, fg); break;
  }
  return img;
}

namespace {

Dataset generate_all(const DatasetSpec& spec, const std::string& split) {
  int per_class = split == "train" ? spec.train_per_class : spec.test_per_class;
  std::uint64_t split_tag = split == "train" ? 0x7124ull : 0x7e57ull;
  Dataset out;
  for (int label = 0; label < spec.classes; ++label) {
    for (int i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(mix_seed(spec.seed, split_tag),
                       static_cast<std::uint64_t>(label) * 1000003ull + i));
      out.push_back({render_shape_image(spec, label, rng), label});
    }
  }
  return out;
}

}  // namespace

Dataset generate_split(const DatasetSpec& spec, const std::string& split) {
  spec.validate();
  if (split != "train" && split != "test")
    throw std::invalid_argument("generate_split: split must be train or test");
  return generate_all(spec, split);
}

void make_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);

  CsvTable index;
  index.header = {"path", "label", "split"};

  for (const std::string split : {"train", "test"}) {
    int per_class = split == "train" ? spec.train_per_class : spec.test_per_class;
    for (int label = 0; label < spec.classes; ++label) {
      fs::path cls_dir = fs::path(out_dir) / split / ("class_" + std::to_string(label));
      fs::create_directories(cls_dir);
      for (int i = 0; i < per_class; ++i) {
        Rng rng(mix_seed(mix_seed(spec.seed, split == "train" ? 0x7124ull : 0x7e57ull),
                         static_cast<std::uint64_t>(label) * 1000003ull + i));
        Tensor img = render_shape_image(spec, label, rng);
        std::string rel = split + "/class_" + std::to_string(label) + "/img_" +
                          std::to_string(i) + ".png";
        write_png((fs::path(out_dir) / rel).string(), img);
        index.rows.push_back({rel, std::to_string(label), split});
      }
    }
  }
  write_csv((fs::path(out_dir) / "index.csv").string(), index);
}

Dataset balanced_subset(const Dataset& data, int n) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < data.size(); ++i)
    by_label[data[i].label].push_back(i);
  Dataset out;
  for (std::size_t round = 0; out.size() < static_cast<std::size_t>(n); ++round) {
    bool any = false;
    for (auto& [label, idx] : by_label) {
      (void)label;
      if (round >= idx.size()) continue;
      any = true;
      out.push_back(data[idx[round]]);
      if (out.size() == static_cast<std::size_t>(n)) break;
    }
    if (!any) break;  // fewer than n images available
  }
  return out;
}

Dataset load_dataset(const std::string& dir, const std::string& split) {
  CsvTable index = read_csv((fs::path(dir) / "index.csv").string());
  Dataset out;
  for (std::size_t r = 0; r < index.rows.size(); ++r) {
    if (index.cell(r, "split") != split) continue;
    Tensor img = read_png((fs::path(dir) / index.cell(r, "path")).string());
    out.push_back({std::move(img), std::stoi(index.cell(r, "label"))});
  }
  return out;
}

}  // namespace hetpure

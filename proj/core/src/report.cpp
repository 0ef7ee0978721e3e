#include "hetpure/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "hetpure/purifier.hpp"

namespace fs = std::filesystem;

namespace hetpure {

namespace {

struct Group {
  std::vector<std::string> key_cells;
  std::vector<std::vector<double>> metric_values;  // per metric column
};

double parse_or_nan(const std::string& s) {
  if (s.empty()) return NAN;
  return std::stod(s);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  std::vector<double> vals;
  for (double x : v)
    if (!std::isnan(x)) vals.push_back(x);
  if (vals.empty()) return {NAN, NAN};
  double m = 0.0;
  for (double x : vals) m += x;
  m /= vals.size();
  double var = 0.0;
  for (double x : vals) var += (x - m) * (x - m);
  var = vals.size() > 1 ? var / (vals.size() - 1) : 0.0;
  return {m, std::sqrt(var)};
}

// svg helpers -----------------------------------------------------------------

std::string svg_header(int w, int h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
     << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

std::string svg_text(double x, double y, const std::string& s, int size = 11) {
  std::ostringstream os;
  os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
     << "\" font-family=\"monospace\">" << s << "</text>\n";
  return os.str();
}

std::string svg_rect(double x, double y, double w, double h, const std::string& fill) {
  std::ostringstream os;
  os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
     << h << "\" fill=\"" << fill << "\"/>\n";
  return os.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path);
  f << body;
}

void render_accuracy_bars(const std::string& path, const CsvTable& summary) {
  int n = static_cast<int>(summary.rows.size());
  int w = std::max(360, 90 * n + 80), h = 260;
  std::ostringstream os;
  os << svg_header(w, h);
  os << svg_text(10, 18, "accuracy by setting (blue standard, red robust)");
  int sa = summary.column("standard_acc_mean");
  int ra = summary.column("robust_acc_mean");
  int lb = summary.column("setting");
  for (int i = 0; i < n; ++i) {
    double std_acc = parse_or_nan(summary.rows[i][sa]);
    double x0 = 50 + 90.0 * i;
    if (!std::isnan(std_acc))
      os << svg_rect(x0, 220 - 180 * std_acc, 30, 180 * std_acc, "#4477cc");
    if (ra >= 0) {
      double rob = parse_or_nan(summary.rows[i][ra]);
      if (!std::isnan(rob))
        os << svg_rect(x0 + 34, 220 - 180 * rob, 30, 180 * rob, "#cc5544");
    }
    os << svg_text(x0, 236, summary.rows[i][lb], 10);
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

void render_tau_sweep(const std::string& path, const CsvTable& summary) {
  struct Pt {
    double tau, std_acc, rob_acc;
  };
  std::vector<Pt> pts;
  int tc = summary.column("tau"), sc = summary.column("standard_acc_mean");
  int rc = summary.column("robust_acc_mean"), lc = summary.column("setting");
  for (const auto& row : summary.rows) {
    if (row[lc] != "sweep_tau") continue;
    pts.push_back({parse_or_nan(row[tc]), parse_or_nan(row[sc]),
                   rc >= 0 ? parse_or_nan(row[rc]) : NAN});
  }
  std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.tau < b.tau; });
  std::ostringstream os;
  os << svg_header(420, 260);
  os << svg_text(10, 18, "accuracy vs tau (blue standard, red robust)");
  if (pts.size() >= 2) {
    auto xpos = [&](double tau) {
      return 40 + 340 * (tau - pts.front().tau) /
                      std::max(1e-9, pts.back().tau - pts.front().tau);
    };
    auto draw_line = [&](auto get, const char* color) {
      std::ostringstream poly;
      bool any = false;
      poly << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
      for (const auto& p : pts) {
        double v = get(p);
        if (std::isnan(v)) continue;
        poly << xpos(p.tau) << "," << 220 - 180 * v << " ";
        any = true;
      }
      poly << "\"/>\n";
      if (any) os << poly.str();
    };
    draw_line([](const Pt& p) { return p.std_acc; }, "#4477cc");
    draw_line([](const Pt& p) { return p.rob_acc; }, "#cc5544");
    for (const auto& p : pts)
      os << svg_text(xpos(p.tau) - 10, 236, format_double(p.tau).substr(0, 4), 9);
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

void render_tlts_heatmap(const std::string& path, const CsvTable& summary) {
  struct Cell {
    double tl, ts, value;
  };
  std::vector<Cell> cells;
  int tlc = summary.column("t_l"), tsc = summary.column("t_s");
  int rc = summary.column("robust_acc_mean");
  int sc = summary.column("standard_acc_mean");
  int lc = summary.column("setting");
  for (const auto& row : summary.rows) {
    if (row[lc] != "sweep_tlts") continue;
    double v = rc >= 0 ? parse_or_nan(row[rc]) : NAN;
    if (std::isnan(v)) v = parse_or_nan(row[sc]);
    cells.push_back({parse_or_nan(row[tlc]), parse_or_nan(row[tsc]), v});
  }
  std::ostringstream os;
  os << svg_header(420, 80 + 60 * std::max<int>(1, static_cast<int>(cells.size())));
  os << svg_text(10, 18, "accuracy per (t_l, t_s)");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    double v = std::isnan(cells[i].value) ? 0.0 : cells[i].value;
    int shade = static_cast<int>(255 - 155 * v);
    std::ostringstream color;
    color << "rgb(" << shade << "," << shade << ",255)";
    os << svg_rect(40, 30 + 60.0 * i, 120, 50, color.str());
    os << svg_text(170, 60 + 60.0 * i,
                   "t_l=" + format_double(cells[i].tl).substr(0, 4) +
                       " t_s=" + format_double(cells[i].ts).substr(0, 4) + " acc=" +
                       format_double(v).substr(0, 5));
  }
  os << "</svg>\n";
  write_file(path, os.str());
}

void render_calls_comparison(const std::string& path) {
  // closed-form accounting at the headline setting
  const int U = 20, tl = 200, ts = 50;
  long single = expected_denoiser_calls(tl, ts, U, false);
  long legacy = expected_denoiser_calls(tl, ts, U, true);
  double reduction = 1.0 - static_cast<double>(single) / legacy;
  std::ostringstream os;
  os << svg_header(420, 220);
  os << svg_text(10, 18, "denoiser calls per purification (U=20, t_l=200, t_s=50)");
  double scale = 160.0 / legacy;
  os << svg_rect(60, 190 - legacy * scale, 80, legacy * scale, "#cc5544");
  os << svg_text(60, 205, "multi-step: " + std::to_string(legacy));
  os << svg_rect(220, 190 - single * scale, 80, single * scale, "#4477cc");
  os << svg_text(220, 205, "single-step: " + std::to_string(single));
  os << svg_text(10, 34, "reduction: " + format_double(100.0 * reduction).substr(0, 5) + "%");
  os << "</svg>\n";
  write_file(path, os.str());
}

}  // namespace

CsvTable summarize_metrics(const CsvTable& metrics) {
  // key = setting columns, metrics averaged over repeats
  std::vector<std::string> key_cols = {"mode", "eps", "norm", "t_l",
                                       "t_s", "tau", "U", "S"};
  std::vector<std::string> metric_cols;
  for (const char* c : {"standard_acc", "robust_acc", "feat_dist_clean",
                        "feat_dist_adv", "denoiser_calls_mean"})
    if (metrics.column(c) >= 0) metric_cols.push_back(c);

  std::map<std::string, Group> groups;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < metrics.rows.size(); ++r) {
    std::string key;
    std::vector<std::string> key_cells;
    for (const auto& kc : key_cols) {
      const std::string& cell = metrics.rows[r][metrics.column(kc)];
      key += cell + "|";
      key_cells.push_back(cell);
    }
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) {
      it->second.key_cells = key_cells;
      it->second.metric_values.resize(metric_cols.size());
      order.push_back(key);
    }
    for (std::size_t m = 0; m < metric_cols.size(); ++m)
      it->second.metric_values[m].push_back(
          parse_or_nan(metrics.rows[r][metrics.column(metric_cols[m])]));
  }

  CsvTable out;
  out.header = {"setting"};
  for (const auto& kc : key_cols) out.header.push_back(kc);
  out.header.push_back("repeats");
  for (const auto& mc : metric_cols) {
    out.header.push_back(mc + "_mean");
    out.header.push_back(mc + "_std");
  }
  // "setting" mirrors the mode cell; rows keep first-seen order
  for (const auto& key : order) {
    const Group& g = groups[key];
    std::vector<std::string> row = {g.key_cells[0]};
    for (const auto& cell : g.key_cells) row.push_back(cell);
    row.push_back(std::to_string(g.metric_values.empty()
                                     ? 0
                                     : static_cast<int>(g.metric_values[0].size())));
    for (const auto& vals : g.metric_values) {
      auto [m, s] = mean_std(vals);
      row.push_back(std::isnan(m) ? "" : format_double(m));
      row.push_back(std::isnan(s) ? "" : format_double(s));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

void write_report(const std::string& metrics_dir) {
  std::string metrics_path = (fs::path(metrics_dir) / "metrics.csv").string();
  CsvTable metrics;
  try {
    metrics = read_csv(metrics_path);
  } catch (const std::exception& ex) {
    throw std::runtime_error(std::string("report: ") + ex.what());
  }
  CsvTable summary = summarize_metrics(metrics);
  write_csv((fs::path(metrics_dir) / "summary.csv").string(), summary);
  render_accuracy_bars((fs::path(metrics_dir) / "accuracy_bars.svg").string(), summary);
  render_tau_sweep((fs::path(metrics_dir) / "tau_sweep.svg").string(), summary);
  render_tlts_heatmap((fs::path(metrics_dir) / "tlts_heatmap.svg").string(), summary);
  render_calls_comparison((fs::path(metrics_dir) / "calls_comparison.svg").string());
}

}  // namespace hetpure

#pragma once

#include <string>

#include "hetpure/csv.hpp"

namespace hetpure {

/// Aggregates metrics.csv in metrics_dir into summary.csv (mean +/- std per
/// setting) and renders plot files: accuracy bars, tau sweep curve, (t_l,t_s)
/// heatmap and the single-step vs multi-step denoiser-call comparison.
/// Deterministic for identical inputs.
void write_report(const std::string& metrics_dir);

/// Group rows of a metrics table by setting (all columns except run_id, seed,
/// the measured metrics and timing), aggregating mean and std.
CsvTable summarize_metrics(const CsvTable& metrics);

}  // namespace hetpure

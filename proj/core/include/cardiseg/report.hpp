#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cardiseg/experiments.hpp"

namespace cardiseg {

/// training_dataset,evaluation_dataset,modality,label,mean,sd
std::string gap_table_csv(const GapReport& report);

/// Minimal reader for the comma-separated files this library writes
/// (header row, no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable parse(const std::string& text);
  std::size_t column(const std::string& name) const;
};

/// Box per (label, evaluation set) over the fold values, each fold drawn as
/// a point, and the mean printed with three decimals.
std::string render_gap_boxplot(const GapReport& report);

/// One panel per label with a line per evaluation set over n, for the rows
/// of `curves` belonging to `method`.
std::string render_sweep_curves(const CsvTable& curves, const std::string& method);

/// Grouped bars of finetuned - baseline per label and evaluation set.
std::string render_delta_bars(const CsvTable& deltas);

struct RenderSummary {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Renders whatever the results directory holds: gap_report.json gives
/// gap_boxplot.svg, sweep_curves.csv gives sweep_method<m>.svg per method,
/// deltas.csv gives delta_bars.svg. Missing or unreadable inputs produce a
/// warning instead of an error.
RenderSummary render_plots(const std::filesystem::path& results_dir);

}  // namespace cardiseg

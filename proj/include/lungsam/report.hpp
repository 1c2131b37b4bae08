#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungsam/evalkit.hpp"

namespace lungsam {

namespace fs = std::filesystem;

/// A rendered table: every cell is already formatted, so Markdown and CSV share one source.
struct Table {
  std::string id;
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::pair<std::size_t, std::size_t>> bold;  // (row, column) cells to emphasise
};

struct CrossDatasetSummary {
  Dataset source = Dataset::shenzhen;
  Dataset target = Dataset::montgomery;
  std::optional<MetricsSummary> transfer;
  std::optional<MetricsSummary> reference;  // target -> target
};

/// Everything a report can draw on. Missing entries render as dashes.
struct ReportInputs {
  std::vector<Dataset> datasets;
  std::map<std::pair<Dataset, PromptMode>, MetricsSummary> zeroshot;
  std::map<std::pair<Dataset, PromptMode>, MetricsSummary> finetuned;
  std::map<std::pair<Dataset, PromptMode>, SweepColumn> sweeps;
  std::vector<CrossDatasetSummary> cross;
  bool include_reference_values = false;
};

struct RenderedTables {
  std::vector<Table> tables;
  std::string markdown;
  std::string csv;  // table_id,row,column,value
  std::size_t warnings = 0;
};

RenderedTables render_tables(const ReportInputs& inputs);

/// The threshold-sweep table of one dataset on its own.
Table render_sweep_table(Dataset dataset, const std::map<std::pair<Dataset, PromptMode>, SweepColumn>& sweeps,
                         bool include_reference_values, std::size_t* warnings = nullptr);

std::string to_markdown(const Table& table);
std::string mean_pm_std(double mean, double std);

struct PanelInfo {
  std::string kind;  // "best" or "worst"
  int rank = 0;      // 1-based
  std::string sample_id;
  double f1 = 0.0;
  double iou = 0.0;
  double threshold = 0.5;
  fs::path path;
};

/// Top-k and bottom-k records by F1 (ties by sample id). `k` is clamped to the record count.
std::vector<PanelInfo> rank_best_worst(std::span<const MetricsRecord> records, int k);

using SampleLookup = std::function<const ImageSample&(const std::string&)>;
using PredictionLookup = std::function<RealGrid(const std::string&)>;

/// Writes one PNG per ranked sample (image | ground-truth contour | predicted contour)
/// plus captions.txt with the scores.
std::vector<PanelInfo> report_best_worst(std::span<const MetricsRecord> records, const SampleLookup& sample,
                                         const PredictionLookup& prediction, int k, const fs::path& out_dir,
                                         const std::string& prefix = "");

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::array<int, 3> bgr{200, 60, 20};
};

/// Static line chart written as PNG.
void plot_lines(const fs::path& path, const std::string& title, const std::string& x_label, std::span<const PlotSeries> series);

}  // namespace lungsam

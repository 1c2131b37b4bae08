#include "lungsam/report.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "lungsam/io.hpp"

namespace lungsam {

namespace {

constexpr const char* kDash = "—";

struct Reference {
  double f1, f1_std, iou, iou_std;
};

// Published reference results, printed next to this run's numbers for diffing.
std::optional<Reference> reference_zeroshot(Dataset d, PromptMode m) {
  if (d == Dataset::montgomery) {
    switch (m) {
      case PromptMode::box: return Reference{0.718, 0.033, 0.586, 0.033};
      case PromptMode::points: return Reference{0.860, 0.013, 0.774, 0.018};
      case PromptMode::both: return Reference{0.848, 0.006, 0.746, 0.007};
    }
  }
  switch (m) {
    case PromptMode::box: return Reference{0.782, 0.009, 0.661, 0.013};
    case PromptMode::points: return Reference{0.726, 0.021, 0.593, 0.026};
    case PromptMode::both: return Reference{0.863, 0.005, 0.765, 0.008};
  }
  return std::nullopt;
}

std::optional<Reference> reference_finetuned(Dataset d, PromptMode m) {
  if (d == Dataset::montgomery) {
    switch (m) {
      case PromptMode::box: return Reference{0.818, 0.040, 0.707, 0.045};
      case PromptMode::points: return Reference{0.943, 0.007, 0.897, 0.012};
      case PromptMode::both: return Reference{0.876, 0.015, 0.787, 0.023};
    }
  }
  switch (m) {
    case PromptMode::box: return Reference{0.797, 0.014, 0.667, 0.024};
    case PromptMode::points: return Reference{0.915, 0.011, 0.845, 0.018};
    case PromptMode::both: return Reference{0.845, 0.012, 0.735, 0.018};
  }
  return std::nullopt;
}

std::array<double, 5> reference_sweep(Dataset d, PromptMode m) {
  if (d == Dataset::montgomery) {
    switch (m) {
      case PromptMode::box: return {0.828, 0.812, 0.743, 0.596, 0.410};
      case PromptMode::points: return {0.898, 0.932, 0.957, 0.960, 0.938};
      case PromptMode::both: return {0.894, 0.893, 0.879, 0.835, 0.759};
    }
  }
  switch (m) {
    case PromptMode::box: return {0.837, 0.127, 0.003, 0.000, 0.000};
    case PromptMode::points: return {0.880, 0.918, 0.870, 0.829, 0.789};
    case PromptMode::both: return {0.846, 0.782, 0.417, 0.105, 0.005};
  }
  return {};
}

// (F1, IoU) of points-prompt transfer source -> target.
std::pair<double, double> reference_cross(Dataset source, Dataset target) {
  if (source == target) return target == Dataset::montgomery ? std::pair{0.943, 0.897} : std::pair{0.915, 0.845};
  return source == Dataset::shenzhen ? std::pair{0.924, 0.860} : std::pair{0.933, 0.875};
}

// Literature U-Net F1 (mean, std) used only for the comparison table.
std::pair<double, double> unet_f1(Dataset d) {
  return d == Dataset::montgomery ? std::pair{0.973, 0.014} : std::pair{0.941, 0.047};
}

constexpr std::array<PromptMode, 3> kModes = {PromptMode::box, PromptMode::points, PromptMode::both};

std::string mode_label(PromptMode m) {
  switch (m) {
    case PromptMode::box: return "Bounding Box";
    case PromptMode::points: return "Points";
    case PromptMode::both: return "Both";
  }
  return "?";
}

std::string dataset_label(Dataset d) { return d == Dataset::montgomery ? "Montgomery" : "Shenzhen"; }

class TableBuilder {
 public:
  explicit TableBuilder(std::size_t& warnings) : warnings_(warnings) {}

  // Formats a present value, or records a warning and returns a dash.
  template <typename T, typename F>
  std::string cell(const T* value, F&& format, const std::string& what) {
    if (value) return format(*value);
    ++warnings_;
    log_warning("report: missing " + what);
    return kDash;
  }

 private:
  std::size_t& warnings_;
};

Table summary_table(const std::string& id, const std::string& title, Dataset d,
                    const std::map<std::pair<Dataset, PromptMode>, MetricsSummary>& source,
                    std::optional<Reference> (*reference)(Dataset, PromptMode), bool with_reference, TableBuilder& b) {
  Table t{id, title, {"Prompt", "F1-Score", "IoU"}, {}, {}};
  if (with_reference) {
    t.header.push_back("Reference F1-Score");
    t.header.push_back("Reference IoU");
  }
  for (PromptMode m : kModes) {
    auto it = source.find({d, m});
    const MetricsSummary* s = it == source.end() ? nullptr : &it->second;
    const std::string what = id + " / " + std::string(to_string(m));
    std::vector<std::string> row{mode_label(m)};
    row.push_back(b.cell(s, [](const MetricsSummary& v) { return mean_pm_std(v.f1_mean, v.f1_std); }, what));
    row.push_back(s ? mean_pm_std(s->iou_mean, s->iou_std) : kDash);
    if (with_reference) {
      const auto r = reference(d, m);
      row.push_back(r ? mean_pm_std(r->f1, r->f1_std) : kDash);
      row.push_back(r ? mean_pm_std(r->iou, r->iou_std) : kDash);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table sweep_table(Dataset d, const std::map<std::pair<Dataset, PromptMode>, SweepColumn>& sweeps, bool with_reference,
                  TableBuilder& b) {
  const std::string id = "sweep_" + std::string(to_string(d));
  Table t{id, "F1-Score per binarization threshold (" + dataset_label(d) + ", validation set)", {"Threshold"}, {}, {}};
  for (PromptMode m : kModes) t.header.push_back(mode_label(m));
  if (with_reference) {
    for (PromptMode m : kModes) t.header.push_back("Reference " + mode_label(m));
  }
  for (std::size_t ti = 0; ti < kSweepThresholds.size(); ++ti) {
    std::vector<std::string> row{format_fixed(kSweepThresholds[ti], 2)};
    for (std::size_t mi = 0; mi < kModes.size(); ++mi) {
      auto it = sweeps.find({d, kModes[mi]});
      const SweepColumn* c = it == sweeps.end() ? nullptr : &it->second;
      std::optional<double> value;
      if (c) {
        for (std::size_t k = 0; k < c->thresholds.size(); ++k) {
          if (std::abs(c->thresholds[k] - kSweepThresholds[ti]) < 1e-9) {
            value = c->mean_f1[k];
            if (k == c->best_index) t.bold.emplace_back(ti, mi + 1);
          }
        }
      }
      const double* v = value ? &*value : nullptr;
      row.push_back(b.cell(v, [](double x) { return format_fixed(x, 3); },
                           id + " / " + std::string(to_string(kModes[mi])) + " @ " + format_fixed(kSweepThresholds[ti], 2)));
    }
    if (with_reference) {
      for (PromptMode m : kModes) row.push_back(format_fixed(reference_sweep(d, m)[ti], 3));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table cross_table(const CrossDatasetSummary& c, bool with_reference, TableBuilder& b) {
  const std::string src = dataset_label(c.source), dst = dataset_label(c.target);
  const std::string id = "cross_" + std::string(to_string(c.source)) + "_" + std::string(to_string(c.target));
  Table t{id, "Trained on " + src + ", tested on " + dst + " (points prompts)", {"Metric", src + " → " + dst, dst + " → " + dst}, {}, {}};
  if (with_reference) {
    t.header.push_back("Reference " + src + " → " + dst);
    t.header.push_back("Reference " + dst + " → " + dst);
  }
  const MetricsSummary* transfer = c.transfer ? &*c.transfer : nullptr;
  const MetricsSummary* reference = c.reference ? &*c.reference : nullptr;
  auto fmt_f1 = [](const MetricsSummary& s) { return format_fixed(s.f1_mean, 3); };
  auto fmt_iou = [](const MetricsSummary& s) { return format_fixed(s.iou_mean, 3); };
  std::vector<std::string> f1_row{"F1-Score", b.cell(transfer, fmt_f1, id + " transfer"), b.cell(reference, fmt_f1, id + " reference")};
  std::vector<std::string> iou_row{"IoU", transfer ? fmt_iou(*transfer) : kDash, reference ? fmt_iou(*reference) : kDash};
  if (with_reference) {
    const auto across = reference_cross(c.source, c.target);
    const auto within = reference_cross(c.target, c.target);
    f1_row.push_back(format_fixed(across.first, 3));
    f1_row.push_back(format_fixed(within.first, 3));
    iou_row.push_back(format_fixed(across.second, 3));
    iou_row.push_back(format_fixed(within.second, 3));
  }
  t.rows = {std::move(f1_row), std::move(iou_row)};
  return t;
}

Table unet_table(const ReportInputs& in, TableBuilder& b) {
  Table t{"unet_comparison", "Points-prompt fine-tuned model compared to U-Net (F1-Score)", {"Dataset", "This run", "U-Net"}, {}, {}};
  if (in.include_reference_values) t.header.push_back("Reference");
  for (std::size_t di = 0; di < in.datasets.size(); ++di) {
    const Dataset d = in.datasets[di];
    auto it = in.finetuned.find({d, PromptMode::points});
    const MetricsSummary* s = it == in.finetuned.end() ? nullptr : &it->second;
    const auto unet = unet_f1(d);
    std::vector<std::string> row{dataset_label(d),
                                 b.cell(s, [](const MetricsSummary& v) { return mean_pm_std(v.f1_mean, v.f1_std); },
                                        "unet_comparison / " + std::string(to_string(d))),
                                 mean_pm_std(unet.first, unet.second)};
    t.bold.emplace_back(di, s && s->f1_mean > unet.first ? 1 : 2);
    if (in.include_reference_values) {
      const auto r = reference_finetuned(d, PromptMode::points);
      row.push_back(mean_pm_std(r->f1, r->f1_std));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Table render_sweep_table(Dataset dataset, const std::map<std::pair<Dataset, PromptMode>, SweepColumn>& sweeps,
                         bool include_reference_values, std::size_t* warnings) {
  std::size_t count = 0;
  TableBuilder b(count);
  Table t = sweep_table(dataset, sweeps, include_reference_values, b);
  if (warnings) *warnings += count;
  return t;
}

std::string mean_pm_std(double mean, double std) { return format_fixed(mean, 3) + "±" + format_fixed(std, 3); }

std::string to_markdown(const Table& table) {
  std::ostringstream out;
  out << "### " << table.title << "\n\n|";
  for (const auto& h : table.header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < table.header.size(); ++i) out << " --- |";
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << '|';
    for (std::size_t c = 0; c < table.rows[r].size(); ++c) {
      const bool bold = std::find(table.bold.begin(), table.bold.end(), std::pair{r, c}) != table.bold.end();
      out << ' ' << (bold ? "**" + table.rows[r][c] + "**" : table.rows[r][c]) << " |";
    }
    out << '\n';
  }
  return out.str();
}

RenderedTables render_tables(const ReportInputs& inputs_in) {
  ReportInputs inputs = inputs_in;
  if (inputs.datasets.empty()) inputs.datasets = {Dataset::montgomery, Dataset::shenzhen};
  RenderedTables out;
  TableBuilder b(out.warnings);
  const bool ref = inputs.include_reference_values;
  for (Dataset d : inputs.datasets) {
    const std::string name = std::string(to_string(d));
    out.tables.push_back(summary_table("zeroshot_" + name, "Zero-shot evaluation on " + dataset_label(d) + " (5 folds)", d,
                                       inputs.zeroshot, reference_zeroshot, ref, b));
    out.tables.push_back(sweep_table(d, inputs.sweeps, ref, b));
  }
  for (const auto& c : inputs.cross) out.tables.push_back(cross_table(c, ref, b));
  for (Dataset d : inputs.datasets) {
    const std::string name = std::string(to_string(d));
    out.tables.push_back(summary_table("finetuned_" + name, "Fine-tuned results on " + dataset_label(d) + " (5-fold cross-validation)",
                                       d, inputs.finetuned, reference_finetuned, ref, b));
  }
  out.tables.push_back(unet_table(inputs, b));

  std::ostringstream md, csv;
  csv << "table_id,row,column,value\n";
  for (const auto& t : out.tables) {
    md << to_markdown(t) << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t c = 1; c < row.size(); ++c) {
        csv << t.id << ',' << csv_escape(row[0]) << ',' << csv_escape(t.header[c]) << ',' << csv_escape(row[c]) << '\n';
      }
    }
  }
  out.markdown = md.str();
  out.csv = csv.str();
  return out;
}

std::vector<PanelInfo> rank_best_worst(std::span<const MetricsRecord> records, int k) {
  if (k < 1) throw std::invalid_argument("rank_best_worst: k must be >= 1");
  std::vector<const MetricsRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  if (static_cast<std::size_t>(k) > order.size()) {
    log_warning("report: k=" + std::to_string(k) + " exceeds the " + std::to_string(order.size()) + " available samples; clamping");
    k = static_cast<int>(order.size());
  }
  std::vector<PanelInfo> panels;
  if (order.empty()) return panels;
  auto by_id = [](const MetricsRecord* a, const MetricsRecord* b) { return a->sample_id < b->sample_id; };
  std::vector<const MetricsRecord*> best = order, worst = order;
  std::stable_sort(best.begin(), best.end(), [&](auto* a, auto* b) { return a->f1 != b->f1 ? a->f1 > b->f1 : by_id(a, b); });
  std::stable_sort(worst.begin(), worst.end(), [&](auto* a, auto* b) { return a->f1 != b->f1 ? a->f1 < b->f1 : by_id(a, b); });
  for (int i = 0; i < k; ++i) {
    const auto* r = best[static_cast<std::size_t>(i)];
    panels.push_back({"best", i + 1, r->sample_id, r->f1, r->iou, r->threshold, {}});
  }
  for (int i = 0; i < k; ++i) {
    const auto* r = worst[static_cast<std::size_t>(i)];
    panels.push_back({"worst", i + 1, r->sample_id, r->f1, r->iou, r->threshold, {}});
  }
  return panels;
}

namespace {

cv::Mat to_bgr(const ByteGrid& image) {
  cv::Mat gray(image.rows(), image.cols(), CV_8UC1, const_cast<std::uint8_t*>(image.data()));
  cv::Mat bgr;
  cv::cvtColor(gray, bgr, cv::COLOR_GRAY2BGR);
  return bgr;
}

void draw_outline(cv::Mat& canvas, const ByteGrid& mask, const cv::Scalar& colour) {
  cv::Mat m(mask.rows(), mask.cols(), CV_8UC1);
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) m.at<std::uint8_t>(r, c) = mask(r, c) ? 255 : 0;
  }
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(m, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  cv::drawContours(canvas, contours, -1, colour, 1);
}

}  // namespace

std::vector<PanelInfo> report_best_worst(std::span<const MetricsRecord> records, const SampleLookup& sample,
                                         const PredictionLookup& prediction, int k, const fs::path& out_dir, const std::string& prefix) {
  auto panels = rank_best_worst(records, k);
  fs::create_directories(out_dir);
  std::ostringstream captions;
  captions << "panel\tsample_id\tf1\tiou\tthreshold\n";
  for (auto& p : panels) {
    const ImageSample& s = sample(p.sample_id);
    const HardMask predicted = binarize(prediction(p.sample_id), p.threshold);
    cv::Mat plain = to_bgr(s.image);
    cv::Mat truth = plain.clone();
    cv::Mat pred = plain.clone();
    draw_outline(truth, s.mask, cv::Scalar(0, 200, 0));
    draw_outline(pred, predicted.pixels, cv::Scalar(0, 0, 230));
    cv::Mat row;
    cv::hconcat(std::vector<cv::Mat>{plain, truth, pred}, row);
    cv::Mat canvas(row.rows + 24, row.cols, CV_8UC3, cv::Scalar(255, 255, 255));
    row.copyTo(canvas(cv::Rect(0, 24, row.cols, row.rows)));
    const std::string label = p.kind + " #" + std::to_string(p.rank) + "  " + p.sample_id + "  F1=" + format_fixed(p.f1, 3) +
                              "  IoU=" + format_fixed(p.iou, 3);
    cv::putText(canvas, label, cv::Point(6, 17), cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    const std::string name = prefix + p.kind + "_" + std::to_string(p.rank) + ".png";
    p.path = out_dir / name;
    if (!cv::imwrite(p.path.string(), canvas)) throw std::runtime_error("cannot write panel " + p.path.string());
    captions << name << '\t' << p.sample_id << '\t' << format_real(p.f1) << '\t' << format_real(p.iou) << '\t' << format_real(p.threshold)
             << '\n';
  }
  write_text(out_dir / (prefix + "captions.txt"), captions.str());
  return panels;
}

void plot_lines(const fs::path& path, const std::string& title, const std::string& x_label, std::span<const PlotSeries> series) {
  constexpr int kW = 720, kH = 440, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const int pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return kTop + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };

  const cv::Scalar axis(60, 60, 60);
  cv::rectangle(canvas, cv::Point(kLeft, kTop), cv::Point(kLeft + pw, kTop + ph), axis, 1);
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xv = x0 + (x1 - x0) * i / 4.0;
    cv::line(canvas, cv::Point(kLeft - 4, py(yv)), cv::Point(kLeft, py(yv)), axis);
    cv::putText(canvas, format_fixed(yv, 3), cv::Point(4, py(yv) + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
    cv::line(canvas, cv::Point(px(xv), kTop + ph), cv::Point(px(xv), kTop + ph + 4), axis);
    cv::putText(canvas, format_fixed(xv, x1 - x0 < 5 ? 2 : 0), cv::Point(px(xv) - 14, kTop + ph + 18), cv::FONT_HERSHEY_SIMPLEX, 0.4,
                axis, 1, cv::LINE_AA);
  }
  cv::putText(canvas, title, cv::Point(kLeft, 24), cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(canvas, x_label, cv::Point(kLeft + pw / 2 - 20, kH - 12), cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);

  int legend_y = kTop + 14;
  for (const auto& s : series) {
    const cv::Scalar colour(s.bgr[0], s.bgr[1], s.bgr[2]);
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    if (pts.size() >= 2) cv::polylines(canvas, pts, false, colour, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(canvas, p, 2, colour, cv::FILLED);
    cv::line(canvas, cv::Point(kLeft + pw + 12, legend_y - 4), cv::Point(kLeft + pw + 32, legend_y - 4), colour, 2);
    cv::putText(canvas, s.name, cv::Point(kLeft + pw + 38, legend_y), cv::FONT_HERSHEY_SIMPLEX, 0.42, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    legend_y += 20;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw std::runtime_error("cannot write plot " + path.string());
}

}  // namespace lungsam

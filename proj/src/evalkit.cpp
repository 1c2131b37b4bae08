#include "lungsam/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "lungsam/io.hpp"
#include "lungsam/rng.hpp"

namespace lungsam {

HardMask binarize(const RealGrid& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must lie in (0,1)");
  HardMask out{ByteGrid(probs.rows(), probs.cols()), threshold};
  for (std::size_t i = 0; i < probs.size(); ++i) out.pixels[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

namespace {

struct Counts {
  std::size_t truth = 0, predicted = 0, both = 0;
};

Counts count(const ByteGrid& truth, const ByteGrid& predicted, const char* what) {
  require_same_shape(truth, predicted, what);
  Counts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool a = truth[i] != 0;
    const bool b = predicted[i] != 0;
    c.truth += a;
    c.predicted += b;
    c.both += a && b;
  }
  return c;
}

}  // namespace

double iou(const ByteGrid& truth, const ByteGrid& predicted) {
  const Counts c = count(truth, predicted, "iou");
  const std::size_t uni = c.truth + c.predicted - c.both;
  return uni == 0 ? 1.0 : static_cast<double>(c.both) / static_cast<double>(uni);
}

double f1(const ByteGrid& truth, const ByteGrid& predicted) {
  const Counts c = count(truth, predicted, "f1");
  const std::size_t total = c.truth + c.predicted;
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(c.both) / static_cast<double>(total);
}

std::size_t foreground_count(const ByteGrid& mask) {
  std::size_t n = 0;
  for (auto v : mask.values()) n += v != 0;
  return n;
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

std::vector<MetricsRecord> sorted_by_id(std::vector<MetricsRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return records;
}

}  // namespace

MetricsSummary summarize(const std::string& label, const std::vector<std::vector<MetricsRecord>>& folds) {
  MetricsSummary s;
  s.label = label;
  std::vector<double> all_f1, all_iou;
  bool first = true;
  for (const auto& fold_in : folds) {
    const auto fold = sorted_by_id(fold_in);
    std::vector<double> f, j;
    for (const auto& r : fold) {
      if (first) {
        s.dataset = r.dataset;
        s.prompt_mode = r.prompt_mode;
        first = false;
      }
      f.push_back(r.f1);
      j.push_back(r.iou);
    }
    s.n_images += fold.size();
    s.fold_f1.push_back(mean_std(f).mean);
    s.fold_iou.push_back(mean_std(j).mean);
    all_f1.insert(all_f1.end(), f.begin(), f.end());
    all_iou.insert(all_iou.end(), j.begin(), j.end());
  }
  const bool over_folds = folds.size() >= 2;
  s.std_over = over_folds ? "folds" : "images";
  const MeanStd f = mean_std(over_folds ? s.fold_f1 : all_f1);
  const MeanStd j = mean_std(over_folds ? s.fold_iou : all_iou);
  s.f1_mean = f.mean;
  s.f1_std = f.std;
  s.iou_mean = j.mean;
  s.iou_std = j.std;
  return s;
}

SweepColumn sweep_soft_masks(std::span<const RealGrid> probs, std::span<const ByteGrid> targets, std::span<const double> thresholds,
                             PromptMode mode) {
  if (probs.size() != targets.size()) throw std::invalid_argument("sweep: prediction/target count mismatch");
  if (probs.empty()) throw std::invalid_argument("sweep: validation set is empty");
  if (thresholds.empty()) throw std::invalid_argument("sweep: no thresholds");
  SweepColumn column;
  column.prompt_mode = mode;
  column.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) sum += f1(targets[i], binarize(probs[i], t).pixels);
    column.mean_f1.push_back(sum / static_cast<double>(probs.size()));
  }
  for (std::size_t i = 1; i < column.mean_f1.size(); ++i) {
    if (column.mean_f1[i] > column.mean_f1[column.best_index]) column.best_index = i;
  }
  return column;
}

namespace {

const PromptSet& prompts_for(const PromptTable& prompts, const std::string& id) {
  auto it = prompts.find(id);
  if (it == prompts.end()) throw std::invalid_argument("no prompts for sample '" + id + "'");
  return it->second;
}

// Rounds through float32 so persisted predictions reproduce the metrics exactly.
RealGrid as_stored(const RealGrid& probs) {
  RealGrid out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = static_cast<double>(static_cast<float>(probs[i]));
  return out;
}

std::vector<RealGrid> predict_all(const SegModelHandle& model, std::span<const ImageSample> samples, const PromptTable& prompts) {
  std::vector<RealGrid> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(as_stored(predict(model, s, prompts_for(prompts, s.id)).probs));
  return out;
}

PromptMode mode_of(const PromptTable& prompts) {
  return prompts.empty() ? PromptMode::points : prompts.begin()->second.mode;
}

}  // namespace

SweepColumn threshold_sweep(const SegModelHandle& model, std::span<const ImageSample> val_samples, const PromptTable& prompts,
                            std::span<const double> thresholds) {
  if (val_samples.empty()) throw std::invalid_argument("threshold_sweep: validation set is empty");
  const auto probs = predict_all(model, val_samples, prompts);
  std::vector<ByteGrid> targets;
  for (const auto& s : val_samples) targets.push_back(s.mask);
  return sweep_soft_masks(probs, targets, thresholds, mode_of(prompts));
}

std::vector<MetricsRecord> evaluate(const SegModelHandle& model, std::span<const ImageSample> samples, const PromptTable& prompts,
                                    double threshold, int fold, const PredictionSink& sink) {
  std::vector<MetricsRecord> records;
  for (const auto& s : samples) {
    const PromptSet& set = prompts_for(prompts, s.id);
    SoftMask soft = predict(model, s, set);
    soft.probs = as_stored(soft.probs);
    const HardMask hard = binarize(soft, threshold);
    records.push_back({s.id, s.dataset, set.mode, threshold, iou(s.mask, hard.pixels), f1(s.mask, hard.pixels)});
    if (sink) sink(fold, s, soft);
  }
  return sorted_by_id(std::move(records));
}

namespace {

double pick_threshold(const SegModelHandle& model, std::span<const ImageSample> samples, const SplitRoles& roles,
                      const PromptTable& prompts, const ThresholdPolicy& policy) {
  if (!policy.sweep) return policy.fixed;
  const auto val = select(samples, roles, Role::val);
  return threshold_sweep(model, val, prompts, policy.candidates).best_threshold();
}

void require_kfold(const FoldPlan& plan, const char* what) {
  if (plan.scheme != Scheme::kfold_5) throw std::invalid_argument(std::string(what) + ": plan must be kfold_5");
}

}  // namespace

FoldedEvaluation cross_validate(const ModelFactory& factory, std::span<const ImageSample> samples, const FoldPlan& plan,
                                const TrainConfig& cfg, const EvalOptions& options, const PredictionSink& sink) {
  require_kfold(plan, "cross_validate");
  cfg.validate();
  FoldedEvaluation out;
  PromptOptions prompt_options = options.prompts;
  prompt_options.mode = cfg.prompt_mode;
  for (int fold = 0; fold < kFolds; ++fold) {
    const SplitRoles roles = plan.roles_for_fold(fold);
    const PromptTable prompts = build_prompts(samples, roles, prompt_options);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(fold));
    TrainResult run = train(factory(), samples, roles, prompts, fold_cfg);
    const double threshold = pick_threshold(run.model, samples, roles, prompts, options.threshold);
    const auto test = select(samples, roles, Role::test);
    out.folds.push_back(evaluate(run.model, test, prompts, threshold, fold, sink));
    out.thresholds_used.push_back(threshold);
    out.curves.push_back(std::move(run.curve));
  }
  out.summary = summarize("finetuned", out.folds);
  return out;
}

FoldedEvaluation evaluate_fixed_model(const SegModelHandle& model, std::span<const ImageSample> samples, const FoldPlan& plan,
                                      const EvalOptions& options, const std::string& label, const PredictionSink& sink) {
  require_kfold(plan, "evaluate_fixed_model");
  FoldedEvaluation out;
  for (int fold = 0; fold < kFolds; ++fold) {
    const SplitRoles roles = plan.roles_for_fold(fold);
    const PromptTable prompts = build_prompts(samples, roles, options.prompts);
    const double threshold = pick_threshold(model, samples, roles, prompts, options.threshold);
    const auto test = select(samples, roles, Role::test);
    out.folds.push_back(evaluate(model, test, prompts, threshold, fold, sink));
    out.thresholds_used.push_back(threshold);
  }
  out.summary = summarize(label, out.folds);
  return out;
}

std::vector<FoldedEvaluation> zero_shot_eval(const SegModelHandle& pretrained, std::span<const ImageSample> samples,
                                             const FoldPlan& plan, std::span<const PromptMode> modes, const EvalOptions& options,
                                             const PredictionSink& sink) {
  std::vector<FoldedEvaluation> out;
  for (PromptMode mode : modes) {
    EvalOptions mode_options = options;
    mode_options.prompts.mode = mode;
    out.push_back(evaluate_fixed_model(pretrained, samples, plan, mode_options, "zeroshot", sink));
  }
  return out;
}

CrossDatasetResult cross_dataset_eval(const SegModelHandle& trained, Dataset source, std::span<const ImageSample> target_samples,
                                      const FoldPlan& target_plan, const EvalOptions& options,
                                      std::optional<MetricsSummary> reference, const PredictionSink& sink) {
  EvalOptions points = options;
  points.prompts.mode = PromptMode::points;
  CrossDatasetResult out;
  out.transfer = evaluate_fixed_model(trained, target_samples, target_plan, points,
                                      std::string(to_string(source)) + "->" + std::string(to_string(target_plan.dataset)), sink);
  out.reference = std::move(reference);
  return out;
}

// ---- persistence ----

std::string records_to_csv(std::span<const MetricsRecord> records) {
  std::ostringstream out;
  out << "sample_id,dataset,prompt_mode,threshold,iou,f1\n";
  for (const auto& r : records) {
    out << r.sample_id << ',' << to_string(r.dataset) << ',' << to_string(r.prompt_mode) << ',' << format_real(r.threshold) << ','
        << format_real(r.iou) << ',' << format_real(r.f1) << '\n';
  }
  return out.str();
}

std::vector<MetricsRecord> records_from_csv(std::string_view text) {
  std::vector<MetricsRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      if (line != "sample_id,dataset,prompt_mode,threshold,iou,f1") throw std::runtime_error("unexpected records CSV header: " + line);
      header = false;
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 6) throw std::runtime_error("malformed records CSV line: " + line);
    out.push_back({f[0], parse_dataset(f[1]), parse_prompt_mode(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
  }
  return out;
}

namespace {

std::string join_reals(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ";" : "") + format_real(values[i]);
  return out;
}

std::vector<double> parse_reals(const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  for (const auto& item : split(text, ';')) out.push_back(std::stod(item));
  return out;
}

constexpr const char* kSummaryHeader =
    "label,dataset,prompt_mode,n_folds,n_images,f1_mean,f1_std,iou_mean,iou_std,std_over,fold_f1,fold_iou";

}  // namespace

std::string summaries_to_csv(std::span<const MetricsSummary> summaries) {
  std::ostringstream out;
  out << kSummaryHeader << '\n';
  for (const auto& s : summaries) {
    out << s.label << ',' << to_string(s.dataset) << ',' << to_string(s.prompt_mode) << ',' << s.fold_f1.size() << ',' << s.n_images << ','
        << format_real(s.f1_mean) << ',' << format_real(s.f1_std) << ',' << format_real(s.iou_mean) << ',' << format_real(s.iou_std) << ','
        << s.std_over << ',' << join_reals(s.fold_f1) << ',' << join_reals(s.fold_iou) << '\n';
  }
  return out.str();
}

std::vector<MetricsSummary> summaries_from_csv(std::string_view text) {
  std::vector<MetricsSummary> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      if (line != kSummaryHeader) throw std::runtime_error("unexpected summary CSV header: " + line);
      header = false;
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 12) throw std::runtime_error("malformed summary CSV line: " + line);
    MetricsSummary s;
    s.label = f[0];
    s.dataset = parse_dataset(f[1]);
    s.prompt_mode = parse_prompt_mode(f[2]);
    s.n_images = std::stoul(f[4]);
    s.f1_mean = std::stod(f[5]);
    s.f1_std = std::stod(f[6]);
    s.iou_mean = std::stod(f[7]);
    s.iou_std = std::stod(f[8]);
    s.std_over = f[9];
    s.fold_f1 = parse_reals(f[10]);
    s.fold_iou = parse_reals(f[11]);
    out.push_back(std::move(s));
  }
  return out;
}

std::string sweep_to_csv(std::span<const SweepColumn> columns) {
  std::ostringstream out;
  out << "prompt_mode,threshold,mean_f1,best\n";
  for (const auto& c : columns) {
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
      out << to_string(c.prompt_mode) << ',' << format_real(c.thresholds[i]) << ',' << format_real(c.mean_f1[i]) << ','
          << (i == c.best_index ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::vector<SweepColumn> sweep_from_csv(std::string_view text) {
  std::vector<SweepColumn> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 4) throw std::runtime_error("malformed sweep CSV line: " + line);
    const PromptMode mode = parse_prompt_mode(f[0]);
    if (out.empty() || out.back().prompt_mode != mode) {
      out.emplace_back();
      out.back().prompt_mode = mode;
    }
    auto& c = out.back();
    if (f[3] == "1") c.best_index = c.thresholds.size();
    c.thresholds.push_back(std::stod(f[1]));
    c.mean_f1.push_back(std::stod(f[2]));
  }
  return out;
}

}  // namespace lungsam

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungsam/data_ingest.hpp"
#include "lungsam/finetune.hpp"
#include "lungsam/model_adapter.hpp"
#include "lungsam/prompt_gen.hpp"

namespace lungsam {

struct HardMask {
  ByteGrid pixels;
  double threshold_used = 0.5;
};

/// pixel = 1 iff prob >= threshold; threshold must lie in (0,1).
HardMask binarize(const RealGrid& probs, double threshold);
inline HardMask binarize(const SoftMask& soft, double threshold) { return binarize(soft.probs, threshold); }

/// |Mv and Mp| / |Mv or Mp|; 1 when both masks are empty.
double iou(const ByteGrid& truth, const ByteGrid& predicted);
/// 2 |Mv and Mp| / (|Mv| + |Mp|); 1 when both masks are empty.
double f1(const ByteGrid& truth, const ByteGrid& predicted);
inline double iou(const HardMask& truth, const HardMask& predicted) { return iou(truth.pixels, predicted.pixels); }
inline double f1(const HardMask& truth, const HardMask& predicted) { return f1(truth.pixels, predicted.pixels); }

std::size_t foreground_count(const ByteGrid& mask);

struct MetricsRecord {
  std::string sample_id;
  Dataset dataset = Dataset::montgomery;
  PromptMode prompt_mode = PromptMode::points;
  double threshold = 0.5;
  double iou = 0.0;
  double f1 = 0.0;
};

struct MetricsSummary {
  std::string label;
  Dataset dataset = Dataset::montgomery;
  PromptMode prompt_mode = PromptMode::points;
  std::vector<double> fold_f1;   // per-fold mean F1
  std::vector<double> fold_iou;  // per-fold mean IoU
  double f1_mean = 0.0;
  double f1_std = 0.0;
  double iou_mean = 0.0;
  double iou_std = 0.0;
  std::size_t n_images = 0;
  /// "folds" when std is over per-fold means, "images" for a single group.
  std::string std_over = "folds";
};

/// Means and population standard deviations. With two or more folds the overall
/// mean/std are taken over the per-fold means; with one fold, over its images.
/// Records are reduced in sample-id order.
MetricsSummary summarize(const std::string& label, const std::vector<std::vector<MetricsRecord>>& folds);

inline constexpr std::array<double, 5> kSweepThresholds = {0.50, 0.55, 0.60, 0.65, 0.70};

struct SweepColumn {
  PromptMode prompt_mode = PromptMode::points;
  std::vector<double> thresholds;
  std::vector<double> mean_f1;
  std::size_t best_index = 0;  // first maximum
  double best_threshold() const { return thresholds.at(best_index); }
};

/// Mean F1 per threshold over precomputed soft masks.
SweepColumn sweep_soft_masks(std::span<const RealGrid> probs, std::span<const ByteGrid> targets, std::span<const double> thresholds,
                             PromptMode mode);

/// Mean F1 per threshold over the given (validation) samples.
SweepColumn threshold_sweep(const SegModelHandle& model, std::span<const ImageSample> val_samples, const PromptTable& prompts,
                            std::span<const double> thresholds = kSweepThresholds);

/// How evaluation picks its binarization threshold.
struct ThresholdPolicy {
  bool sweep = false;  // pick the best of `candidates` on the validation role
  double fixed = 0.5;
  std::vector<double> candidates{kSweepThresholds.begin(), kSweepThresholds.end()};
};

struct EvalOptions {
  PromptOptions prompts;
  ThresholdPolicy threshold;
};

/// Receives every test-time prediction (fold index, sample, soft mask).
using PredictionSink = std::function<void(int fold, const ImageSample&, const SoftMask&)>;

/// Per-image records for `samples` at `threshold`; records sorted by id. Soft masks are
/// rounded to float32 before binarization so persisted predictions reproduce the records.
std::vector<MetricsRecord> evaluate(const SegModelHandle& model, std::span<const ImageSample> samples, const PromptTable& prompts,
                                    double threshold, int fold = 0, const PredictionSink& sink = {});

struct FoldedEvaluation {
  MetricsSummary summary;
  std::vector<std::vector<MetricsRecord>> folds;
  std::vector<double> thresholds_used;
  std::vector<LearningCurve> curves;  // empty for fixed-model evaluation
};

/// Five-fold fine-tuning: for every fold, train on the three training folds (the next fold
/// validates) and test on the held-out fold.
FoldedEvaluation cross_validate(const ModelFactory& factory, std::span<const ImageSample> samples, const FoldPlan& plan,
                                const TrainConfig& cfg, const EvalOptions& options, const PredictionSink& sink = {});

/// Evaluates one fixed model on the test fold of every k-fold split, with prompts built
/// from that split's training role. Shared by zero-shot and cross-dataset evaluation.
FoldedEvaluation evaluate_fixed_model(const SegModelHandle& model, std::span<const ImageSample> samples, const FoldPlan& plan,
                                      const EvalOptions& options, const std::string& label, const PredictionSink& sink = {});

/// Pretrained weights, one summary per prompt mode.
std::vector<FoldedEvaluation> zero_shot_eval(const SegModelHandle& pretrained, std::span<const ImageSample> samples,
                                             const FoldPlan& plan, std::span<const PromptMode> modes, const EvalOptions& options,
                                             const PredictionSink& sink = {});

struct CrossDatasetResult {
  FoldedEvaluation transfer;
  std::optional<MetricsSummary> reference;  // within-dataset result for the target, when known
};

/// A model fine-tuned on one dataset, evaluated with points prompts on another dataset's
/// k-fold test sets (prompts from the target's own training-role mean image).
CrossDatasetResult cross_dataset_eval(const SegModelHandle& trained, Dataset source, std::span<const ImageSample> target_samples,
                                      const FoldPlan& target_plan, const EvalOptions& options,
                                      std::optional<MetricsSummary> reference = std::nullopt, const PredictionSink& sink = {});

// Persistence: records CSV columns sample_id,dataset,prompt_mode,threshold,iou,f1.
std::string records_to_csv(std::span<const MetricsRecord> records);
std::vector<MetricsRecord> records_from_csv(std::string_view text);
std::string summaries_to_csv(std::span<const MetricsSummary> summaries);
std::vector<MetricsSummary> summaries_from_csv(std::string_view text);
std::string sweep_to_csv(std::span<const SweepColumn> columns);
std::vector<SweepColumn> sweep_from_csv(std::string_view text);

}  // namespace lungsam

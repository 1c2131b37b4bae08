#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lungsam/data_ingest.hpp"
#include "lungsam/model_adapter.hpp"
#include "lungsam/prompt_gen.hpp"

namespace lungsam {

inline constexpr double kDiceSmooth = 1e-5;
/// Lower bound on the true-class probability inside the focal log term.
inline constexpr double kFocalProbFloor = 1e-7;

struct LossTerms {
  double total = 0.0;
  double dice = 0.0;
  double focal = 0.0;
};

/// w_dice * (1 - (2 sum(p t) + eps) / (sum p + sum t + eps)) + w_focal * mean(-(1 - p_t)^gamma log p_t).
/// When `grad` is non-null it receives d(total)/d(probs).
LossTerms dice_focal_loss(const RealGrid& probs, const ByteGrid& target, double w_dice, double w_focal, double gamma,
                          RealGrid* grad = nullptr);

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.0;
  int epochs = 100;
  int batch_size = 4;
  double w_dice = 1.0;
  double w_focal = 1.0;
  double focal_gamma = 2.0;
  PromptMode prompt_mode = PromptMode::points;
  std::uint64_t seed = kDefaultSeed;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_threshold = 0.5;

  /// Every violated constraint, keyed by field name; empty when valid.
  std::vector<std::string> issues() const;
  void validate() const;
};

struct LearningCurve {
  std::vector<double> per_epoch_train_loss;
  std::vector<double> per_epoch_val_f1;
  int best_epoch = 0;  // index of the epoch whose weights were kept
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, double loss);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Adam with L2 weight decay folded into the gradient.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::size_t> sizes, double lr, double weight_decay, double beta1, double beta2, double eps);
  void step(std::vector<ParameterView>& params, const std::vector<std::vector<double>>& grads);
  long steps() const { return t_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainResult {
  SegModelHandle model;  // weights from the best validation epoch
  LearningCurve curve;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_f1)>;

/// Decoder-only fine-tuning on the training role, validated on the val role.
TrainResult train(const SegModelHandle& initial, std::span<const ImageSample> samples, const SplitRoles& roles,
                  const PromptTable& prompts, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// train() without the learning_rate > 0 check (lr = 0 is accepted); epochs >= 1 still required.
TrainResult run_training(const SegModelHandle& initial, std::span<const ImageSample> samples, const SplitRoles& roles,
                         const PromptTable& prompts, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct GridSpec {
  std::vector<double> learning_rates{1e-5, 1e-4, 1e-3};
  std::vector<double> weight_decays{0.0, 1e-1, 1e-3};
};

struct GridCell {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double val_f1 = 0.0;
  bool diverged = false;
  std::string note;
  LearningCurve curve;
};

struct GridSearchResult {
  TrainConfig best;
  std::size_t best_index = 0;
  std::vector<GridCell> cells;  // row-major over (learning_rates, weight_decays) as given
  std::optional<TrainResult> best_run;
};

using ModelFactory = std::function<SegModelHandle()>;

/// Trains every (lr, wd) cell from a fresh model and picks the highest validation F1;
/// ties go to the smaller lr, then the smaller wd. Diverged cells score 0.
GridSearchResult grid_search(const ModelFactory& factory, std::span<const ImageSample> samples, const SplitRoles& roles,
                             const PromptTable& prompts, const GridSpec& grid, const TrainConfig& base);

}  // namespace lungsam

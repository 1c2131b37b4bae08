#include "lungsam/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>

#include "lungsam/evalkit.hpp"
#include "lungsam/io.hpp"
#include "lungsam/rng.hpp"

namespace lungsam {

LossTerms dice_focal_loss(const RealGrid& probs, const ByteGrid& target, double w_dice, double w_focal, double gamma,
                          RealGrid* grad) {
  require_same_shape(probs, target, "dice_focal_loss");
  if (probs.empty()) throw std::invalid_argument("dice_focal_loss: empty input");
  double sum_pt = 0.0, sum_p = 0.0, sum_t = 0.0, focal_sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (std::isnan(p)) throw std::invalid_argument("dice_focal_loss: NaN in probabilities");
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("dice_focal_loss: probability outside [0,1]");
    const double t = target[i] ? 1.0 : 0.0;
    sum_pt += p * t;
    sum_p += p;
    sum_t += t;
    const double q = std::max(t > 0 ? p : 1.0 - p, kFocalProbFloor);
    focal_sum += -std::pow(1.0 - q, gamma) * std::log(q);
  }
  const double n = static_cast<double>(probs.size());
  const double denom = sum_p + sum_t + kDiceSmooth;
  const double numer = 2.0 * sum_pt + kDiceSmooth;

  LossTerms out;
  out.dice = 1.0 - numer / denom;
  out.focal = focal_sum / n;
  out.total = w_dice * out.dice + w_focal * out.focal;

  if (grad) {
    *grad = RealGrid(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double p = probs[i];
      const bool fg = target[i] != 0;
      const double t = fg ? 1.0 : 0.0;
      const double d_dice = -(2.0 * t * denom - numer) / (denom * denom);
      const double pt = fg ? p : 1.0 - p;
      double d_focal = 0.0;
      if (pt > kFocalProbFloor) {
        const double one_minus = 1.0 - pt;
        const double log_term = one_minus > 0.0 ? gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt) : 0.0;
        const double d_pt = log_term - std::pow(one_minus, gamma) / pt;
        d_focal = (fg ? d_pt : -d_pt) / n;
      }
      (*grad)[i] = w_dice * d_dice + w_focal * d_focal;
    }
  }
  return out;
}

std::vector<std::string> TrainConfig::issues() const {
  std::vector<std::string> out;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.push_back("learning_rate: must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) out.push_back("weight_decay: must be >= 0");
  if (epochs < 1) out.push_back("epochs: must be >= 1");
  if (batch_size < 1) out.push_back("batch_size: must be >= 1");
  if (!(w_dice >= 0.0)) out.push_back("w_dice: must be >= 0");
  if (!(w_focal >= 0.0)) out.push_back("w_focal: must be >= 0");
  if (w_dice == 0.0 && w_focal == 0.0) out.push_back("w_dice/w_focal: must not both be 0");
  if (!(focal_gamma >= 0.0)) out.push_back("focal_gamma: must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) out.push_back("adam_beta1: must lie in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) out.push_back("adam_beta2: must lie in [0,1)");
  if (!(adam_eps > 0.0)) out.push_back("adam_eps: must be > 0");
  if (!(val_threshold > 0.0 && val_threshold < 1.0)) out.push_back("val_threshold: must lie in (0,1)");
  return out;
}

void TrainConfig::validate() const {
  const auto problems = issues();
  if (problems.empty()) return;
  std::string message = "invalid training config:";
  for (const auto& p : problems) message += "\n  " + p;
  throw std::invalid_argument(message);
}

TrainingDiverged::TrainingDiverged(int epoch, double loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " (loss " + format_real(loss) + ")"),
      epoch_(epoch) {}

AdamOptimizer::AdamOptimizer(std::vector<std::size_t> sizes, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto n : sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamOptimizer::step(std::vector<ParameterView>& params, const std::vector<std::vector<double>>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw std::invalid_argument("AdamOptimizer: tensor count mismatch");
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].values;
    if (values.size() != m_[k].size() || grads[k].size() != m_[k].size()) throw std::invalid_argument("AdamOptimizer: size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[k][i] + weight_decay_ * values[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
      const double m_hat = m_[k][i] / bias1;
      const double v_hat = v_[k][i] / bias2;
      values[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

namespace {

const PromptSet& prompts_for(const PromptTable& prompts, const std::string& id) {
  auto it = prompts.find(id);
  if (it == prompts.end()) throw std::invalid_argument("no prompts for sample '" + id + "'");
  return it->second;
}

std::vector<std::vector<double>> zero_grads(const std::vector<ParameterView>& views) {
  std::vector<std::vector<double>> grads;
  for (const auto& v : views) grads.emplace_back(v.values.size(), 0.0);
  return grads;
}

}  // namespace

TrainResult run_training(const SegModelHandle& initial, std::span<const ImageSample> samples, const SplitRoles& roles,
                         const PromptTable& prompts, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("train: learning_rate must be >= 0");
  const auto train_set = select(samples, roles, Role::train);
  const auto val_set = select(samples, roles, Role::val);
  if (train_set.empty()) throw std::invalid_argument("train: no training-role samples");
  if (val_set.empty()) throw std::invalid_argument("train: no validation-role samples");
  for (const auto& s : train_set) prompts_for(prompts, s.id);
  for (const auto& s : val_set) prompts_for(prompts, s.id);

  SegModelHandle model = initial;
  // The encoders are frozen, so embeddings are computed once.
  std::map<std::string, ImageEmbedding> embeddings;
  for (const auto& s : train_set) embeddings.emplace(s.id, model.model().encode(s.image));
  for (const auto& s : val_set) embeddings.emplace(s.id, model.model().encode(s.image));

  auto views = trainable_parameters(model);
  std::vector<std::size_t> sizes;
  for (const auto& v : views) sizes.push_back(v.values.size());
  AdamOptimizer adam(sizes, cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  auto snapshot = [&views] {
    std::vector<std::vector<double>> copy;
    for (const auto& v : views) copy.emplace_back(v.values.begin(), v.values.end());
    return copy;
  };

  LearningCurve curve;
  double best_f1 = -1.0;
  std::vector<std::vector<double>> best_weights = snapshot();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SeededRng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto grads = zero_grads(views);
      for (std::size_t b = start; b < stop; ++b) {
        const ImageSample& s = train_set[order[b]];
        std::unique_ptr<ForwardTape> tape;
        const RealGrid probs = model.model().forward(embeddings.at(s.id), prompts_for(prompts, s.id), &tape);
        for (double p : probs.values()) {
          if (!std::isfinite(p)) throw TrainingDiverged(epoch, p);
        }
        RealGrid dprobs;
        const LossTerms loss = dice_focal_loss(probs, s.mask, cfg.w_dice, cfg.w_focal, cfg.focal_gamma, &dprobs);
        if (!std::isfinite(loss.total)) throw TrainingDiverged(epoch, loss.total);
        loss_sum += loss.total;
        for (auto& g : dprobs.values()) g *= scale;
        model.model().backward(*tape, dprobs, grads);
      }
      for (const auto& g : grads) {
        for (double v : g) {
          if (!std::isfinite(v)) throw TrainingDiverged(epoch, v);
        }
      }
      adam.step(views, grads);
    }
    const double epoch_loss = loss_sum / static_cast<double>(train_set.size());

    double f1_sum = 0.0;
    for (const auto& s : val_set) {
      const RealGrid probs = model.model().forward(embeddings.at(s.id), prompts_for(prompts, s.id));
      f1_sum += f1(s.mask, binarize(probs, cfg.val_threshold).pixels);
    }
    const double val_f1 = f1_sum / static_cast<double>(val_set.size());
    curve.per_epoch_train_loss.push_back(epoch_loss);
    curve.per_epoch_val_f1.push_back(val_f1);
    if (val_f1 > best_f1) {
      best_f1 = val_f1;
      curve.best_epoch = epoch;
      best_weights = snapshot();
    }
    if (on_epoch) on_epoch(epoch, epoch_loss, val_f1);
  }

  for (std::size_t k = 0; k < views.size(); ++k) std::copy(best_weights[k].begin(), best_weights[k].end(), views[k].values.begin());
  return TrainResult{std::move(model), std::move(curve)};
}

TrainResult train(const SegModelHandle& initial, std::span<const ImageSample> samples, const SplitRoles& roles,
                  const PromptTable& prompts, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  return run_training(initial, samples, roles, prompts, cfg, on_epoch);
}

GridSearchResult grid_search(const ModelFactory& factory, std::span<const ImageSample> samples, const SplitRoles& roles,
                             const PromptTable& prompts, const GridSpec& grid, const TrainConfig& base) {
  if (grid.learning_rates.empty() || grid.weight_decays.empty()) throw std::invalid_argument("grid_search: empty grid");
  base.validate();

  struct Outcome {
    GridCell cell;
    std::optional<TrainResult> run;
  };
  std::vector<std::future<Outcome>> pending;
  for (double lr : grid.learning_rates) {
    for (double wd : grid.weight_decays) {
      TrainConfig cfg = base;
      cfg.learning_rate = lr;
      cfg.weight_decay = wd;
      pending.push_back(std::async(std::launch::async, [&, cfg] {
        Outcome out;
        out.cell.learning_rate = cfg.learning_rate;
        out.cell.weight_decay = cfg.weight_decay;
        try {
          cfg.validate();
          TrainResult run = train(factory(), samples, roles, prompts, cfg);
          out.cell.curve = run.curve;
          out.cell.val_f1 = run.curve.per_epoch_val_f1.at(static_cast<std::size_t>(run.curve.best_epoch));
          out.run = std::move(run);
        } catch (const TrainingDiverged& e) {
          out.cell.diverged = true;
          out.cell.val_f1 = 0.0;
          out.cell.note = e.what();
        } catch (const std::invalid_argument& e) {
          out.cell.diverged = true;
          out.cell.val_f1 = 0.0;
          out.cell.note = e.what();
        }
        return out;
      }));
    }
  }

  GridSearchResult result;
  std::vector<std::optional<TrainResult>> runs;
  for (auto& f : pending) {
    Outcome out = f.get();
    if (out.cell.diverged) log_warning("grid cell lr=" + format_real(out.cell.learning_rate) + " wd=" + format_real(out.cell.weight_decay) +
                                       " flagged: " + out.cell.note);
    result.cells.push_back(std::move(out.cell));
    runs.push_back(std::move(out.run));
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const GridCell& c = result.cells[i];
    if (!best) {
      best = i;
      continue;
    }
    const GridCell& b = result.cells[*best];
    const bool better = c.val_f1 > b.val_f1 ||
                        (c.val_f1 == b.val_f1 && (c.learning_rate < b.learning_rate ||
                                                  (c.learning_rate == b.learning_rate && c.weight_decay < b.weight_decay)));
    if (better) best = i;
  }
  result.best_index = *best;
  result.best = base;
  result.best.learning_rate = result.cells[*best].learning_rate;
  result.best.weight_decay = result.cells[*best].weight_decay;
  result.best_run = std::move(runs[*best]);
  return result;
}

}  // namespace lungsam

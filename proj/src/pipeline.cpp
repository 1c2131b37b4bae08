#include "lungsam/pipeline.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lungsam/io.hpp"
#include "lungsam/report.hpp"

namespace lungsam {

namespace {

using nlohmann::json;

std::vector<ImageSample> load_source(const DataSource& src) {
  if (!src.cache.empty()) {
    auto samples = read_cache(src.cache);
    for (const auto& s : samples) {
      if (s.dataset != src.dataset) {
        throw std::runtime_error("cache " + src.cache.string() + " holds " + std::string(to_string(s.dataset)) + " samples, config says " +
                                 std::string(to_string(src.dataset)));
      }
    }
    return samples;
  }
  LoadResult loaded = load_dataset(src.dataset, src.root);
  for (const auto& e : loaded.excluded) log_warning("excluded " + e.id + ": " + e.reason);
  return std::move(loaded.samples);
}

Grid<float> to_f32(const RealGrid& g) {
  Grid<float> out(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<float>(g[i]);
  return out;
}

RealGrid to_f64(const Grid<float>& g) {
  RealGrid out(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i];
  return out;
}

std::string curve_csv(const LearningCurve& curve) {
  std::ostringstream out;
  out << "epoch,train_loss,val_f1,kept\n";
  for (std::size_t e = 0; e < curve.per_epoch_train_loss.size(); ++e) {
    out << e + 1 << ',' << format_real(curve.per_epoch_train_loss[e]) << ',' << format_real(curve.per_epoch_val_f1.at(e)) << ','
        << (static_cast<int>(e) == curve.best_epoch ? 1 : 0) << '\n';
  }
  return out.str();
}

void plot_curve(const fs::path& path, const LearningCurve& curve, const std::string& title) {
  PlotSeries loss{"train loss", {}, curve.per_epoch_train_loss, {200, 60, 20}};
  PlotSeries val{"val F1", {}, curve.per_epoch_val_f1, {30, 140, 30}};
  for (std::size_t e = 0; e < curve.per_epoch_train_loss.size(); ++e) {
    loss.x.push_back(static_cast<double>(e + 1));
    val.x.push_back(static_cast<double>(e + 1));
  }
  const std::vector<PlotSeries> series{loss, val};
  plot_lines(path, title, "epoch", series);
}

std::string threshold_label(const ThresholdPolicy& p) { return p.sweep ? "sweep" : "fixed"; }

// Records, thresholds and (via the sink) predictions of one folded evaluation.
void write_folded(const fs::path& dir, const FoldedEvaluation& ev, const ThresholdPolicy& policy) {
  fs::create_directories(dir / "records");
  for (std::size_t k = 0; k < ev.folds.size(); ++k) {
    write_text(dir / "records" / ("fold_" + std::to_string(k) + ".csv"), records_to_csv(ev.folds[k]));
  }
  std::ostringstream t;
  t << "fold,threshold,policy\n";
  for (std::size_t k = 0; k < ev.thresholds_used.size(); ++k) {
    t << k << ',' << format_real(ev.thresholds_used[k]) << ',' << threshold_label(policy) << '\n';
  }
  write_text(dir / "thresholds.csv", t.str());
  for (std::size_t k = 0; k < ev.curves.size(); ++k) {
    fs::create_directories(dir / "curves");
    write_text(dir / "curves" / ("fold_" + std::to_string(k) + ".csv"), curve_csv(ev.curves[k]));
  }
}

PredictionSink npy_sink(const fs::path& stage_root) {
  return [stage_root](int, const ImageSample& s, const SoftMask& soft) {
    const fs::path dir = stage_root / std::string(to_string(soft.prompt_mode)) / "predictions";
    fs::create_directories(dir);
    write_npy_f32(dir / (s.id + ".npy"), to_f32(soft.probs));
  };
}

std::vector<MetricsSummary> read_summaries(const fs::path& path) {
  if (!fs::exists(path)) return {};
  return summaries_from_csv(read_text(path));
}

std::vector<MetricsRecord> read_records_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".csv") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricsRecord> out;
  for (const auto& f : files) {
    auto part = records_from_csv(read_text(f));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::string sha_of_text(std::string_view text) {
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string summary_markdown(std::span<const MetricsSummary> summaries) {
  std::ostringstream out;
  out << "| label | dataset | prompt | folds | images | F1 | IoU | std over |\n| --- | --- | --- | --- | --- | --- | --- | --- |\n";
  for (const auto& s : summaries) {
    out << "| " << s.label << " | " << to_string(s.dataset) << " | " << to_string(s.prompt_mode) << " | " << s.fold_f1.size() << " | "
        << s.n_images << " | " << mean_pm_std(s.f1_mean, s.f1_std) << " | " << mean_pm_std(s.iou_mean, s.iou_std) << " | " << s.std_over
        << " |\n";
  }
  return out.str();
}

// Marker file that exists exactly while something is in progress (or has failed).
class PartialMarker {
 public:
  PartialMarker(fs::path path, const std::string& what) : path_(std::move(path)) {
    fs::create_directories(path_.parent_path());
    write_text(path_, what + "\n");
  }
  void done() { fs::remove(path_); }

 private:
  fs::path path_;
};

}  // namespace

fs::path stage_dir(const fs::path& run_dir, const std::string& stage) {
  return run_dir / (stage == "cross-eval" ? std::string("cross_eval") : stage);
}

struct Pipeline::State {
  std::optional<std::vector<ImageSample>> samples;
  std::optional<std::vector<ImageSample>> target_samples;
  std::optional<SegModelHandle> base;
  std::optional<FoldPlan> holdout, kfold;
};

Pipeline::Pipeline(ExperimentConfig cfg, bool force, std::string config_source)
    : cfg_(std::move(cfg)), force_(force), config_source_(std::move(config_source)), state_(std::make_unique<State>()) {}

Pipeline::~Pipeline() = default;

std::vector<fs::path> Pipeline::stage_outputs(const std::string& stage) const {
  std::vector<fs::path> out;
  const fs::path dir = stage_dir(cfg_.run_dir, stage);
  if (fs::exists(dir)) {
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) out.push_back(fs::relative(e.path(), cfg_.run_dir));
    }
  }
  if (stage == "report") {
    for (const char* f : {"summary.csv", "summary.md"}) {
      if (fs::exists(cfg_.run_dir / f)) out.emplace_back(f);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string Pipeline::upstream_digest(const std::string& stage) const {
  std::vector<std::string> deps;
  if (stage == "sweep" || stage == "eval" || stage == "cross-eval") deps = {"finetune"};
  if (stage == "report") deps = {"finetune", "sweep", "zeroshot", "eval", "cross-eval"};
  std::string acc;
  for (const auto& d : deps) {
    const fs::path m = cfg_.run_dir / "stages" / (d + ".json");
    acc += d + "=" + (fs::exists(m) ? sha256_file(m) : std::string("none")) + ";";
  }
  return sha_of_text(acc);
}

bool Pipeline::up_to_date(const std::string& stage) const {
  const fs::path stages = cfg_.run_dir / "stages";
  const fs::path manifest = stages / (stage + ".json");
  if (!fs::exists(manifest) || fs::exists(stages / (stage + ".PARTIAL"))) return false;
  json m;
  try {
    m = json::parse(read_text(manifest));
  } catch (const std::exception&) {
    return false;
  }
  if (m.value("config_sha256", "") != config_hash(cfg_) || m.value("upstream", "") != upstream_digest(stage)) return false;
  if (!m.contains("outputs") || !m["outputs"].is_object()) return false;
  for (auto it = m["outputs"].begin(); it != m["outputs"].end(); ++it) {
    const fs::path p = cfg_.run_dir / it.key();
    if (!fs::exists(p) || sha256_file(p) != it.value().get<std::string>()) return false;
  }
  return true;
}

void Pipeline::finish(const std::string& stage) {
  json m;
  m["stage"] = stage;
  m["config_sha256"] = config_hash(cfg_);
  m["upstream"] = upstream_digest(stage);
  m["outputs"] = json::object();
  for (const auto& rel : stage_outputs(stage)) m["outputs"][rel.generic_string()] = sha256_file(cfg_.run_dir / rel);
  write_text(cfg_.run_dir / "stages" / (stage + ".json"), m.dump(2) + "\n");
}

std::vector<StageOutcome> Pipeline::run(const std::vector<std::string>& requested) {
  for (const auto& s : requested) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) throw std::invalid_argument("unknown stage '" + s + "'");
  }
  // Resolve everything that can fail cheaply before any compute starts.
  if (!cfg_.data.cache.empty() && !fs::exists(cfg_.data.cache / "manifest.tsv")) {
    throw DatasetNotFound("data.cache: no manifest.tsv in " + cfg_.data.cache.string() + " (run `lungsam prepare` first)");
  }
  if (!cfg_.data.root.empty() && !fs::is_directory(cfg_.data.root)) {
    throw DatasetNotFound("data.root: " + cfg_.data.root.string() + " is not a directory");
  }
  const bool wants_cross = std::find(requested.begin(), requested.end(), "cross-eval") != requested.end();
  if (wants_cross && !cfg_.cross_eval) throw std::runtime_error("cross-eval requested but the config has no cross_eval section");
  const bool needs_base = std::any_of(requested.begin(), requested.end(),
                                      [](const std::string& s) { return s == "finetune" || s == "zeroshot" || s == "eval"; });
  if (needs_base) state_->base = load_model(cfg_.checkpoint, cfg_.checkpoint_sha256);

  fs::create_directories(cfg_.run_dir / "stages");
  write_text(cfg_.run_dir / "config.json", config_to_json(cfg_).dump(2) + "\n");
  if (!config_source_.empty()) write_text(cfg_.run_dir / "config.source.json", config_source_);

  PartialMarker run_marker(cfg_.run_dir / "PARTIAL", "run in progress");
  std::vector<StageOutcome> outcomes;
  for (const auto& stage : kStageOrder) {
    if (std::find(requested.begin(), requested.end(), stage) == requested.end()) continue;
    if (!force_ && up_to_date(stage)) {
      log_info("stage " + stage + ": up to date, skipped");
      outcomes.push_back({stage, true});
      continue;
    }
    log_info("stage " + stage + ": running");
    PartialMarker marker(cfg_.run_dir / "stages" / (stage + ".PARTIAL"), "stage " + stage + " in progress");
    fs::remove_all(stage_dir(cfg_.run_dir, stage));
    if (stage == "finetune") stage_finetune();
    if (stage == "sweep") stage_sweep();
    if (stage == "zeroshot") stage_zeroshot();
    if (stage == "eval") stage_eval();
    if (stage == "cross-eval") stage_cross_eval();
    if (stage == "report") stage_report();
    finish(stage);
    marker.done();
    log_info("stage " + stage + ": done");
    outcomes.push_back({stage, false});
  }
  run_marker.done();
  return outcomes;
}

namespace {

const std::vector<ImageSample>& ensure_samples(std::optional<std::vector<ImageSample>>& slot, const DataSource& src) {
  if (!slot) {
    slot = load_source(src);
    if (slot->empty()) throw DatasetError("no samples found for " + std::string(to_string(src.dataset)), {});
  }
  return *slot;
}

const FoldPlan& ensure_plan(std::optional<FoldPlan>& slot, std::span<const ImageSample> samples, Scheme scheme, std::uint64_t seed,
                            const fs::path& out, const DataSource& src) {
  if (!slot) {
    slot = make_fold_plan(samples, scheme, seed);
    std::optional<fs::path> cache;
    if (!src.cache.empty()) cache = src.cache;
    write_text(out, plan_to_json(*slot, cache));
  }
  return *slot;
}

void require_stage(const fs::path& run_dir, const std::string& stage, const std::string& needed) {
  if (!fs::exists(run_dir / "stages" / (needed + ".json"))) {
    throw std::runtime_error("stage " + stage + " needs the outputs of stage " + needed + "; run it first");
  }
}

}  // namespace

void Pipeline::stage_finetune() {
  const auto& samples = ensure_samples(state_->samples, cfg_.data);
  const FoldPlan& plan = ensure_plan(state_->holdout, samples, Scheme::holdout_60_20_20, cfg_.seed,
                                     cfg_.run_dir / "plans" / "plan_holdout.json", cfg_.data);
  const SplitRoles roles = plan.roles();
  const SegModelHandle base = *state_->base;
  const ModelFactory factory = [&base] { return base; };

  for (PromptMode mode : cfg_.prompt_modes) {
    const fs::path dir = stage_dir(cfg_.run_dir, "finetune") / std::string(to_string(mode));
    fs::create_directories(dir);
    PromptOptions po = cfg_.prompts;
    po.mode = mode;
    const PromptTable prompts = build_prompts(samples, roles, po);
    write_text(dir / "prompts.tsv", prompts_to_text(prompts, roles, po));

    TrainConfig tc = cfg_.train;
    tc.prompt_mode = mode;
    std::ostringstream log;
    log << "dataset=" << to_string(cfg_.data.dataset) << " mode=" << to_string(mode) << " checkpoint=" << base.checkpoint_id()
        << " train=" << roles.ids(Role::train).size() << " val=" << roles.ids(Role::val).size() << '\n';
    std::optional<TrainResult> result;
    if (cfg_.grid) {
      GridSearchResult gs = grid_search(factory, samples, roles, prompts, *cfg_.grid, tc);
      std::ostringstream grid;
      grid << "learning_rate,weight_decay,val_f1,best_epoch,diverged,selected,note\n";
      for (std::size_t i = 0; i < gs.cells.size(); ++i) {
        const GridCell& c = gs.cells[i];
        std::string note = c.note;
        std::replace(note.begin(), note.end(), ',', ';');
        grid << format_real(c.learning_rate) << ',' << format_real(c.weight_decay) << ',' << format_real(c.val_f1) << ','
             << (c.diverged ? -1 : c.curve.best_epoch + 1) << ',' << (c.diverged ? 1 : 0) << ',' << (i == gs.best_index ? 1 : 0) << ','
             << note << '\n';
        log << "grid lr=" << format_real(c.learning_rate) << " wd=" << format_real(c.weight_decay) << " val_f1=" << format_real(c.val_f1)
            << (c.diverged ? " (flagged: " + c.note + ")" : std::string()) << '\n';
      }
      write_text(dir / "grid.csv", grid.str());
      if (!gs.best_run) throw std::runtime_error("grid search for mode " + std::string(to_string(mode)) + ": no cell trained successfully");
      tc = gs.best;
      result = std::move(*gs.best_run);
    } else {
      result = train(base, samples, roles, prompts, tc, [&](int epoch, double loss, double val) {
        log_info("  " + std::string(to_string(mode)) + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tc.epochs) +
                 " loss=" + format_fixed(loss, 5) + " val_f1=" + format_fixed(val, 4));
      });
    }
    const LearningCurve& curve = result->curve;
    for (std::size_t e = 0; e < curve.per_epoch_train_loss.size(); ++e) {
      log << "epoch " << e + 1 << " train_loss=" << format_real(curve.per_epoch_train_loss[e])
          << " val_f1=" << format_real(curve.per_epoch_val_f1[e]) << '\n';
    }
    log << "selected learning_rate=" << format_real(tc.learning_rate) << " weight_decay=" << format_real(tc.weight_decay)
        << " best_epoch=" << curve.best_epoch + 1 << '\n';
    write_text(dir / "run.log", log.str());
    write_text(dir / "learning_curve.csv", curve_csv(curve));
    plot_curve(dir / "learning_curve.png", curve, "Learning curve (" + std::string(to_string(cfg_.data.dataset)) + ", " +
                                                      std::string(to_string(mode)) + ")");
    const json selected{{"learning_rate", tc.learning_rate},
                        {"weight_decay", tc.weight_decay},
                        {"best_epoch", curve.best_epoch + 1},
                        {"val_f1", curve.per_epoch_val_f1.at(static_cast<std::size_t>(curve.best_epoch))},
                        {"dataset", to_string(cfg_.data.dataset)},
                        {"prompt_mode", to_string(mode)}};
    write_text(dir / "selected.json", selected.dump(2) + "\n");
    save_checkpoint(result->model, dir / "best.lsam", selected.dump());
  }
}

void Pipeline::stage_sweep() {
  require_stage(cfg_.run_dir, "sweep", "finetune");
  const auto& samples = ensure_samples(state_->samples, cfg_.data);
  const FoldPlan& plan = ensure_plan(state_->holdout, samples, Scheme::holdout_60_20_20, cfg_.seed,
                                     cfg_.run_dir / "plans" / "plan_holdout.json", cfg_.data);
  const auto val = select(samples, plan.roles(), Role::val);
  const fs::path dir = stage_dir(cfg_.run_dir, "sweep");
  fs::create_directories(dir);

  std::vector<SweepColumn> columns;
  std::vector<PlotSeries> series;
  const std::array<std::array<int, 3>, 3> colours{{{200, 60, 20}, {30, 140, 30}, {20, 20, 200}}};
  for (PromptMode mode : cfg_.prompt_modes) {
    const fs::path ft = stage_dir(cfg_.run_dir, "finetune") / std::string(to_string(mode));
    const SegModelHandle model = load_model((ft / "best.lsam").string());
    const PromptTable prompts = prompts_from_text(read_text(ft / "prompts.tsv"));
    columns.push_back(threshold_sweep(model, val, prompts));
    series.push_back({std::string(to_string(mode)), columns.back().thresholds, columns.back().mean_f1,
                      colours[static_cast<std::size_t>(mode)]});
  }
  write_text(dir / "sweep.csv", sweep_to_csv(columns));

  std::map<std::pair<Dataset, PromptMode>, SweepColumn> by_mode;
  for (const auto& c : columns) by_mode[{cfg_.data.dataset, c.prompt_mode}] = c;
  const Table table = render_sweep_table(cfg_.data.dataset, by_mode, cfg_.report.reference_values);
  write_text(dir / "sweep.md", to_markdown(table));
  plot_lines(dir / "sweep.png", "Validation F1 per threshold (" + std::string(to_string(cfg_.data.dataset)) + ")", "threshold", series);
}

void Pipeline::stage_zeroshot() {
  const auto& samples = ensure_samples(state_->samples, cfg_.data);
  const FoldPlan& plan =
      ensure_plan(state_->kfold, samples, Scheme::kfold_5, cfg_.seed, cfg_.run_dir / "plans" / "plan_kfold5.json", cfg_.data);
  const fs::path dir = stage_dir(cfg_.run_dir, "zeroshot");
  const EvalOptions options{cfg_.prompts, cfg_.threshold};
  const auto results = zero_shot_eval(*state_->base, samples, plan, cfg_.prompt_modes, options, npy_sink(dir));
  std::vector<MetricsSummary> summaries;
  for (std::size_t i = 0; i < results.size(); ++i) {
    write_folded(dir / std::string(to_string(cfg_.prompt_modes[i])), results[i], cfg_.threshold);
    summaries.push_back(results[i].summary);
  }
  write_text(dir / "summary.csv", summaries_to_csv(summaries));
}

void Pipeline::stage_eval() {
  const auto& samples = ensure_samples(state_->samples, cfg_.data);
  const fs::path dir = stage_dir(cfg_.run_dir, "eval");
  std::vector<MetricsSummary> summaries;
  for (PromptMode mode : cfg_.prompt_modes) {
    const fs::path ft = stage_dir(cfg_.run_dir, "finetune") / std::string(to_string(mode));
    EvalOptions options{cfg_.prompts, cfg_.threshold};
    options.prompts.mode = mode;
    FoldedEvaluation ev;
    if (cfg_.scheme == Scheme::kfold_5) {
      const FoldPlan& plan =
          ensure_plan(state_->kfold, samples, Scheme::kfold_5, cfg_.seed, cfg_.run_dir / "plans" / "plan_kfold5.json", cfg_.data);
      TrainConfig tc = cfg_.train;
      tc.prompt_mode = mode;
      if (fs::exists(ft / "selected.json")) {
        const json sel = json::parse(read_text(ft / "selected.json"));
        tc.learning_rate = sel.at("learning_rate").get<double>();
        tc.weight_decay = sel.at("weight_decay").get<double>();
      }
      const SegModelHandle base = *state_->base;
      ev = cross_validate([&base] { return base; }, samples, plan, tc, options, npy_sink(dir));
    } else {
      require_stage(cfg_.run_dir, "eval", "finetune");
      const FoldPlan& plan = ensure_plan(state_->holdout, samples, Scheme::holdout_60_20_20, cfg_.seed,
                                         cfg_.run_dir / "plans" / "plan_holdout.json", cfg_.data);
      const SplitRoles roles = plan.roles();
      const SegModelHandle model = load_model((ft / "best.lsam").string());
      const PromptTable prompts = prompts_from_text(read_text(ft / "prompts.tsv"));
      double threshold = cfg_.threshold.fixed;
      if (cfg_.threshold.sweep) threshold = threshold_sweep(model, select(samples, roles, Role::val), prompts, cfg_.threshold.candidates).best_threshold();
      ev.folds.push_back(evaluate(model, select(samples, roles, Role::test), prompts, threshold, 0, npy_sink(dir)));
      ev.thresholds_used.push_back(threshold);
      ev.summary = summarize("finetuned", ev.folds);
    }
    write_folded(dir / std::string(to_string(mode)), ev, cfg_.threshold);
    summaries.push_back(ev.summary);
  }
  write_text(dir / "summary.csv", summaries_to_csv(summaries));
}

void Pipeline::stage_cross_eval() {
  require_stage(cfg_.run_dir, "cross-eval", "finetune");
  const CrossEvalConfig& cross = *cfg_.cross_eval;
  const fs::path checkpoint = stage_dir(cfg_.run_dir, "finetune") / "points" / "best.lsam";
  if (!fs::exists(checkpoint)) throw std::runtime_error("cross-eval needs a points-mode fine-tuned model at " + checkpoint.string());
  const SegModelHandle trained = load_model(checkpoint.string());
  const auto& target = ensure_samples(state_->target_samples, cross.target);
  std::optional<FoldPlan> plan_slot;
  const FoldPlan& plan =
      ensure_plan(plan_slot, target, Scheme::kfold_5, cfg_.seed, cfg_.run_dir / "plans" / "cross_plan_kfold5.json", cross.target);

  std::optional<MetricsSummary> reference;
  if (!cross.reference_run.empty()) {
    for (auto& s : read_summaries(cross.reference_run / "eval" / "summary.csv")) {
      if (s.dataset == cross.target.dataset && s.prompt_mode == PromptMode::points) reference = s;
    }
    if (!reference) log_warning("cross-eval: no points-mode " + std::string(to_string(cross.target.dataset)) + " result in " + cross.reference_run.string());
  }
  if (reference) reference->label = std::string(to_string(cross.target.dataset)) + "->" + std::string(to_string(cross.target.dataset));

  const fs::path dir = stage_dir(cfg_.run_dir, "cross-eval");
  const EvalOptions options{cfg_.prompts, cfg_.threshold};
  const CrossDatasetResult result = cross_dataset_eval(trained, cfg_.data.dataset, target, plan, options, reference, npy_sink(dir));
  write_folded(dir / "points", result.transfer, cfg_.threshold);
  std::vector<MetricsSummary> summaries{result.transfer.summary};
  if (result.reference) summaries.push_back(*result.reference);
  write_text(dir / "summary.csv", summaries_to_csv(summaries));
}

void Pipeline::stage_report() {
  const fs::path dir = stage_dir(cfg_.run_dir, "report");
  fs::create_directories(dir);
  ReportInputs in;
  in.datasets = {cfg_.data.dataset};
  in.include_reference_values = cfg_.report.reference_values;
  std::vector<MetricsSummary> all;
  for (auto& s : read_summaries(stage_dir(cfg_.run_dir, "zeroshot") / "summary.csv")) {
    in.zeroshot[{s.dataset, s.prompt_mode}] = s;
    all.push_back(s);
  }
  for (auto& s : read_summaries(stage_dir(cfg_.run_dir, "eval") / "summary.csv")) {
    in.finetuned[{s.dataset, s.prompt_mode}] = s;
    all.push_back(s);
  }
  const fs::path sweep_csv = stage_dir(cfg_.run_dir, "sweep") / "sweep.csv";
  if (fs::exists(sweep_csv)) {
    for (auto& c : sweep_from_csv(read_text(sweep_csv))) in.sweeps[{cfg_.data.dataset, c.prompt_mode}] = c;
  }
  if (cfg_.cross_eval) {
    CrossDatasetSummary c{cfg_.data.dataset, cfg_.cross_eval->target.dataset, std::nullopt, std::nullopt};
    const std::string transfer_label = std::string(to_string(c.source)) + "->" + std::string(to_string(c.target));
    for (auto& s : read_summaries(stage_dir(cfg_.run_dir, "cross-eval") / "summary.csv")) {
      if (s.label == transfer_label) {
        c.transfer = s;
      } else {
        c.reference = s;
      }
      all.push_back(s);
    }
    in.cross.push_back(c);
  }

  const RenderedTables rendered = render_tables(in);
  std::string md = rendered.markdown;
  if (rendered.warnings > 0) md += "_" + std::to_string(rendered.warnings) + " cell(s) missing; see the run log._\n";
  write_text(dir / "tables.md", md);
  write_text(dir / "tables.csv", rendered.csv);
  write_text(cfg_.run_dir / "summary.csv", summaries_to_csv(all));
  write_text(cfg_.run_dir / "summary.md", summary_markdown(all));

  // Best/worst panels from the per-image records and the persisted soft masks.
  std::ostringstream captions;
  captions << "source\tprompt_mode\tpanel\tsample_id\tf1\tiou\tthreshold\n";
  std::map<std::string, const ImageSample*> index;
  for (PromptMode mode : cfg_.prompt_modes) {
    const std::string m(to_string(mode));
    std::string source = "eval";
    auto records = read_records_dir(stage_dir(cfg_.run_dir, "eval") / m / "records");
    if (records.empty()) {
      source = "zeroshot";
      records = read_records_dir(stage_dir(cfg_.run_dir, "zeroshot") / m / "records");
    }
    if (records.empty()) {
      log_warning("report: no per-image records for mode " + m + "; panels skipped");
      continue;
    }
    if (index.empty()) {
      for (const auto& s : ensure_samples(state_->samples, cfg_.data)) index[s.id] = &s;
    }
    const fs::path pred_dir = stage_dir(cfg_.run_dir, source) / m / "predictions";
    const auto panels = report_best_worst(
        records,
        [&](const std::string& id) -> const ImageSample& {
          auto it = index.find(id);
          if (it == index.end()) throw std::runtime_error("report: sample " + id + " not in the dataset");
          return *it->second;
        },
        [&](const std::string& id) { return to_f64(read_npy_f32(pred_dir / (id + ".npy"))); }, cfg_.report.k, dir / "panels" / m);
    for (const auto& p : panels) {
      captions << source << '\t' << m << '\t' << fs::relative(p.path, dir).generic_string() << '\t' << p.sample_id << '\t'
               << format_real(p.f1) << '\t' << format_real(p.iou) << '\t' << format_real(p.threshold) << '\n';
    }
  }
  write_text(dir / "captions.txt", captions.str());
  log_info("report: " + std::to_string(rendered.warnings) + " missing cell(s)");
}

}  // namespace lungsam

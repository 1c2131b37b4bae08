#include "lungsam/cli.hpp"

#include <CLI11.hpp>
#include <iostream>

#include "lungsam/config.hpp"
#include "lungsam/io.hpp"
#include "lungsam/model_adapter.hpp"
#include "lungsam/pipeline.hpp"
#include "lungsam/synthetic.hpp"

namespace lungsam {

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  bool force = false;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError({"--config: a config file is required for this command"});
  ExperimentConfig cfg = load_config(g.config);
  if (g.device != "cpu") {
    throw ConfigError({g.device == "gpu" ? "--device: gpu requested but this build has no GPU backend; use cpu"
                                         : "--device: must be cpu or gpu"});
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.prompts.seed = *g.seed;
  }
  return cfg;
}

int run_stages(const Globals& g, const std::vector<std::string>& stages) {
  ExperimentConfig cfg = resolve_config(g);
  Pipeline pipeline(cfg, g.force, read_text(g.config));
  const auto outcomes = stages.empty() ? pipeline.run_configured() : pipeline.run(stages);
  for (const auto& o : outcomes) std::cout << o.stage << ": " << (o.skipped ? "skipped (up to date)" : "done") << '\n';
  std::cout << "run directory: " << cfg.run_dir.string() << '\n';
  return 0;
}

int do_prepare(const std::string& dataset_name, const std::string& root, const std::string& out, std::uint64_t seed) {
  const Dataset dataset = parse_dataset(dataset_name);
  LoadResult loaded = load_dataset(dataset, root);
  for (const auto& e : loaded.excluded) log_warning("excluded " + e.id + ": " + e.reason);
  write_cache(loaded.samples, out);
  const fs::path cache = fs::absolute(out);
  write_text(cache / "plan_holdout.json", plan_to_json(make_fold_plan(loaded.samples, Scheme::holdout_60_20_20, seed), cache));
  write_text(cache / "plan_kfold5.json", plan_to_json(make_fold_plan(loaded.samples, Scheme::kfold_5, seed), cache));
  std::cout << "prepared " << loaded.samples.size() << " " << dataset_name << " samples (" << loaded.excluded.size() << " excluded) in "
            << cache.string() << '\n';
  return 0;
}

struct PromptArgs {
  std::string plan, out, cache, mode = "points";
  int fold = 0;
  PromptOptions options;
};

int do_prompts(PromptArgs a, const std::optional<std::uint64_t>& seed) {
  std::optional<fs::path> cache_dir;
  const FoldPlan plan = plan_from_json(read_text(a.plan), &cache_dir);
  if (!a.cache.empty()) cache_dir = fs::path(a.cache);
  if (!cache_dir) throw std::runtime_error("plan " + a.plan + " records no cache_dir; pass --cache");
  const auto samples = read_cache(*cache_dir);
  if (a.fold < 0 || a.fold >= kFolds) throw std::invalid_argument("--fold must be between 0 and 4");
  const SplitRoles roles = plan.scheme == Scheme::kfold_5 ? plan.roles_for_fold(a.fold) : plan.roles();
  a.options.mode = parse_prompt_mode(a.mode);
  if (seed) a.options.seed = *seed;
  a.options.validate();
  const PromptTable table = build_prompts(samples, roles, a.options);
  const std::string text = prompts_to_text(table, roles, a.options);
  if (a.out.empty() || a.out == "-") {
    std::cout << text;
  } else {
    write_text(a.out, text);
    std::cout << "wrote prompts for " << table.size() << " samples to " << a.out << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Prompted lung segmentation experiments on chest X-rays", "lungsam"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--device", g.device, "cpu or gpu")->check(CLI::IsMember({"cpu", "gpu"}));
  app.add_flag("--force", g.force, "Recompute stages even when their manifest is current");
  app.add_flag("--quiet", g.quiet, "Only print warnings and results");
  app.fallthrough();

  std::function<int()> action;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in a published directory layout");
  std::string synth_dataset = "montgomery", synth_out;
  int synth_count = 16;
  synth->add_option("--dataset", synth_dataset)->check(CLI::IsMember({"montgomery", "shenzhen"}));
  synth->add_option("--count", synth_count)->check(CLI::Range(1, 100000));
  synth->add_option("--out", synth_out)->required();
  synth->callback([&] {
    action = [&] {
      write_synthetic_dataset(parse_dataset(synth_dataset), synth_count, g.seed.value_or(kDefaultSeed), synth_out);
      std::cout << "wrote " << synth_count << " synthetic " << synth_dataset << " cases to " << synth_out << '\n';
      return 0;
    };
  });

  auto* prepare = app.add_subcommand("prepare", "Load, standardize and cache a dataset; write split plans");
  std::string prep_dataset, prep_root, prep_out;
  prepare->add_option("--dataset", prep_dataset)->required()->check(CLI::IsMember({"montgomery", "shenzhen"}));
  prepare->add_option("--root", prep_root)->required();
  prepare->add_option("--out", prep_out)->required();
  prepare->callback([&] { action = [&] { return do_prepare(prep_dataset, prep_root, prep_out, g.seed.value_or(kDefaultSeed)); }; });

  auto* prompts = app.add_subcommand("prompts", "Build the prompt manifest for a split plan");
  PromptArgs pa;
  prompts->add_option("--plan", pa.plan)->required();
  prompts->add_option("--mode", pa.mode)->check(CLI::IsMember({"box", "points", "both"}));
  prompts->add_option("--level", pa.options.level);
  prompts->add_option("--k", pa.options.k_per_component);
  prompts->add_option("--jitter", pa.options.jitter);
  prompts->add_option("--eval-jitter", pa.options.eval_jitter);
  prompts->add_flag("--single-box", pa.options.single_box);
  prompts->add_option("--fold", pa.fold, "Test fold of a k-fold plan");
  prompts->add_option("--cache", pa.cache, "Cache directory (defaults to the one named in the plan)");
  prompts->add_option("--out", pa.out, "Output file, '-' for stdout");
  prompts->callback([&] { action = [&] { return do_prompts(pa, g.seed); }; });

  auto stage_command = [&](const char* name, const char* help, std::vector<std::string> stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&, stages] { action = [&, stages] { return run_stages(g, stages); }; });
    return sub;
  };
  stage_command("finetune", "Fine-tune the mask decoder on the holdout split", {"finetune"});
  stage_command("sweep", "Sweep binarization thresholds on the validation split", {"sweep"});
  auto* eval = app.add_subcommand("eval", "Five-fold evaluation (fine-tuned, or pretrained with --zero-shot)");
  bool zero_shot = false;
  eval->add_flag("--zero-shot", zero_shot, "Evaluate the pretrained weights without fine-tuning");
  eval->callback([&] { action = [&] { return run_stages(g, {zero_shot ? "zeroshot" : "eval"}); }; });
  stage_command("cross-eval", "Evaluate the fine-tuned points model on the other dataset", {"cross-eval"});
  stage_command("report", "Render tables, panels and plots from a run directory", {"report"});
  stage_command("run", "Run every stage listed in the config", {});

  auto* exp = app.add_subcommand("export-checkpoint", "Write a model to the native checkpoint format");
  std::string exp_id = "stub", exp_out;
  exp->add_option("--checkpoint", exp_id, "Checkpoint id or path");
  exp->add_option("--out", exp_out)->required();
  exp->callback([&] {
    action = [&] {
      const SegModelHandle handle = load_model(exp_id);
      save_checkpoint(handle, exp_out, nlohmann::json{{"exported_from", exp_id}}.dump());
      const auto census = handle.census();
      std::cout << "wrote " << exp_out << " (" << census.n_total << " parameters, " << census.n_trainable << " trainable) sha256 "
                << sha256_file(exp_out) << '\n';
      return 0;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }
  set_quiet(g.quiet);

  try {
    return action ? action() : kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace lungsam

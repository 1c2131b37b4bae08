#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lungsam/config.hpp"
#include "lungsam/model_adapter.hpp"

namespace lungsam {

namespace fs = std::filesystem;

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // a valid manifest was found
};

/// Runs experiment stages into `cfg.run_dir`. Each finished stage leaves a manifest in
/// stages/<stage>.json recording the config hash, its upstream manifests and the hash of
/// every file it wrote; a stage whose manifest still matches is skipped unless forced.
/// While a stage runs, stages/<stage>.PARTIAL exists, and it is left behind on failure.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, bool force, std::string config_source = {});
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Runs the given stages (plus nothing else) in canonical order.
  std::vector<StageOutcome> run(const std::vector<std::string>& stages);
  std::vector<StageOutcome> run_configured() { return run(cfg_.resolved_stages()); }

  const ExperimentConfig& config() const { return cfg_; }

 private:
  struct State;
  ExperimentConfig cfg_;
  bool force_;
  std::string config_source_;
  std::unique_ptr<State> state_;

  bool up_to_date(const std::string& stage) const;
  void finish(const std::string& stage);
  std::vector<fs::path> stage_outputs(const std::string& stage) const;
  std::string upstream_digest(const std::string& stage) const;

  void stage_finetune();
  void stage_sweep();
  void stage_zeroshot();
  void stage_eval();
  void stage_cross_eval();
  void stage_report();
};

/// Directory of a stage inside the run directory ("cross-eval" lives in cross_eval/).
fs::path stage_dir(const fs::path& run_dir, const std::string& stage);

}  // namespace lungsam

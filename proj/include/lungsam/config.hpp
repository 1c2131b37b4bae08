#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lungsam/data_ingest.hpp"
#include "lungsam/evalkit.hpp"
#include "lungsam/finetune.hpp"
#include "lungsam/prompt_gen.hpp"

namespace lungsam {

namespace fs = std::filesystem;

inline const std::vector<std::string> kStageOrder = {"finetune", "sweep", "zeroshot", "eval", "cross-eval", "report"};

struct DataSource {
  Dataset dataset = Dataset::montgomery;
  fs::path cache;  // prepared cache directory (preferred)
  fs::path root;   // raw dataset directory, loaded directly when no cache is given
};

struct CrossEvalConfig {
  DataSource target;
  fs::path reference_run;  // optional run directory of a within-target experiment
};

struct ReportConfig {
  int k = 3;
  bool reference_values = false;
};

struct ExperimentConfig {
  fs::path config_path;
  fs::path run_dir;
  std::uint64_t seed = kDefaultSeed;
  std::string device = "cpu";
  std::string checkpoint;  // empty: $SEG_CHECKPOINT
  std::string checkpoint_sha256;
  DataSource data;
  Scheme scheme = Scheme::kfold_5;
  std::vector<PromptMode> prompt_modes{PromptMode::points};
  PromptOptions prompts;
  TrainConfig train;
  std::optional<GridSpec> grid;
  ThresholdPolicy threshold;
  std::vector<std::string> stages;
  std::optional<CrossEvalConfig> cross_eval;
  ReportConfig report;

  /// The configured stages, or the default list, in execution order.
  std::vector<std::string> resolved_stages() const;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Parses and validates a JSON experiment config. Relative paths resolve against
/// `base_dir`. Every problem is collected and reported in a single ConfigError.
ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);

/// Fully resolved config (absolute paths, defaults filled in).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Hash of the resolved config, ignoring which stages were requested.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace lungsam

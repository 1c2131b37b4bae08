#include "lungsam/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lungsam/io.hpp"

namespace lungsam {

namespace {

using nlohmann::json;

// Typed accessors that record a problem instead of throwing, so one pass reports everything.
class Reader {
 public:
  Reader(std::vector<std::string>& issues, fs::path base) : issues_(issues), base_(std::move(base)) {}

  void issue(const std::string& key, const std::string& what) { issues_.push_back(key + ": " + what); }

  void unknown_keys(const json& obj, const std::string& prefix, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
        issue(prefix + it.key(), "unknown key");
      }
    }
  }

  const json* object(const json& obj, const char* key, const std::string& name) {
    if (!obj.contains(key)) return nullptr;
    const json& v = obj.at(key);
    if (!v.is_object()) {
      issue(name, "must be an object");
      return nullptr;
    }
    return &v;
  }

  std::optional<double> number(const json& obj, const char* key, const std::string& name) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_number()) {
      issue(name, "must be a number");
      return std::nullopt;
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      issue(name, "must be finite");
      return std::nullopt;
    }
    return d;
  }

  std::optional<long long> integer(const json& obj, const char* key, const std::string& name) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
      issue(name, "must be an integer");
      return std::nullopt;
    }
    return v.get<long long>();
  }

  std::optional<bool> boolean(const json& obj, const char* key, const std::string& name) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_boolean()) {
      issue(name, "must be true or false");
      return std::nullopt;
    }
    return v.get<bool>();
  }

  std::optional<std::string> string(const json& obj, const char* key, const std::string& name) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (!v.is_string()) {
      issue(name, "must be a string");
      return std::nullopt;
    }
    return v.get<std::string>();
  }

  std::optional<fs::path> path(const json& obj, const char* key, const std::string& name) {
    auto s = string(obj, key, name);
    if (!s) return std::nullopt;
    if (s->empty()) {
      issue(name, "must not be empty");
      return std::nullopt;
    }
    return resolve(*s);
  }

  std::vector<double> numbers(const json& obj, const char* key, const std::string& name) {
    std::vector<double> out;
    if (!obj.contains(key)) return out;
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty()) {
      issue(name, "must be a non-empty array of numbers");
      return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) {
        issue(name + "[" + std::to_string(i) + "]", "must be a number");
        continue;
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const json& obj, const char* key, const std::string& name) {
    std::vector<std::string> out;
    if (!obj.contains(key)) return out;
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty()) {
      issue(name, "must be a non-empty array of strings");
      return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) {
        issue(name + "[" + std::to_string(i) + "]", "must be a string");
        continue;
      }
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  fs::path resolve(const fs::path& p) const { return (p.is_absolute() ? p : base_ / p).lexically_normal(); }

  template <typename T, typename Parse>
  std::optional<T> parsed(const std::optional<std::string>& text, const std::string& name, Parse&& parse) {
    if (!text) return std::nullopt;
    try {
      return parse(*text);
    } catch (const std::exception& e) {
      issue(name, e.what());
      return std::nullopt;
    }
  }

 private:
  std::vector<std::string>& issues_;
  fs::path base_;
};

std::optional<DataSource> read_source(Reader& r, const json& obj, const std::string& prefix) {
  r.unknown_keys(obj, prefix + ".", {"dataset", "cache", "root"});
  DataSource src;
  bool ok = true;
  if (!obj.contains("dataset")) {
    r.issue(prefix + ".dataset", "is required");
    ok = false;
  } else if (auto d = r.parsed<Dataset>(r.string(obj, "dataset", prefix + ".dataset"), prefix + ".dataset",
                                        [](const std::string& s) { return parse_dataset(s); })) {
    src.dataset = *d;
  } else {
    ok = false;
  }
  if (auto p = r.path(obj, "cache", prefix + ".cache")) src.cache = *p;
  if (auto p = r.path(obj, "root", prefix + ".root")) src.root = *p;
  if (src.cache.empty() && src.root.empty()) {
    r.issue(prefix, "one of 'cache' or 'root' is required");
    ok = false;
  }
  if (!src.cache.empty() && !src.root.empty()) {
    r.issue(prefix, "give either 'cache' or 'root', not both");
    ok = false;
  }
  return ok ? std::optional{src} : std::nullopt;
}

void read_train(Reader& r, const json& t, TrainConfig& train) {
  r.unknown_keys(t, "train.", {"learning_rate", "weight_decay", "epochs", "batch_size", "w_dice", "w_focal", "focal_gamma", "adam_beta1",
                               "adam_beta2", "adam_eps", "val_threshold"});
  auto real = [&](const char* key, double& slot) {
    if (auto v = r.number(t, key, std::string("train.") + key)) slot = *v;
  };
  auto whole = [&](const char* key, int& slot) {
    if (auto v = r.integer(t, key, std::string("train.") + key)) slot = static_cast<int>(std::clamp<long long>(*v, -1, 1'000'000));
  };
  real("learning_rate", train.learning_rate);
  real("weight_decay", train.weight_decay);
  whole("epochs", train.epochs);
  whole("batch_size", train.batch_size);
  real("w_dice", train.w_dice);
  real("w_focal", train.w_focal);
  real("focal_gamma", train.focal_gamma);
  real("adam_beta1", train.adam_beta1);
  real("adam_beta2", train.adam_beta2);
  real("adam_eps", train.adam_eps);
  real("val_threshold", train.val_threshold);
}

void read_prompts(Reader& r, const json& p, PromptOptions& prompts) {
  r.unknown_keys(p, "prompts.", {"level", "k", "jitter", "eval_jitter", "single_box"});
  if (auto v = r.number(p, "level", "prompts.level")) {
    if (*v <= 0.0 || *v >= 1.0) r.issue("prompts.level", "must lie in (0, 1)");
    prompts.level = *v;
  }
  if (auto v = r.integer(p, "k", "prompts.k")) {
    if (*v < 1 || *v > 64) r.issue("prompts.k", "must be between 1 and 64");
    prompts.k_per_component = static_cast<int>(std::clamp<long long>(*v, 1, 64));
  }
  if (auto v = r.integer(p, "jitter", "prompts.jitter")) {
    if (*v < 0 || *v >= kSide) r.issue("prompts.jitter", "must be between 0 and " + std::to_string(kSide - 1));
    prompts.jitter = static_cast<int>(std::clamp<long long>(*v, 0, kSide - 1));
  }
  if (auto v = r.integer(p, "eval_jitter", "prompts.eval_jitter")) {
    if (*v < 0 || *v >= kSide) r.issue("prompts.eval_jitter", "must be between 0 and " + std::to_string(kSide - 1));
    prompts.eval_jitter = static_cast<int>(std::clamp<long long>(*v, 0, kSide - 1));
  }
  if (auto v = r.boolean(p, "single_box", "prompts.single_box")) prompts.single_box = *v;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error([&] {
        std::string msg = "invalid config (" + std::to_string(issues.size()) + " problem" + (issues.size() == 1 ? "" : "s") + "):";
        for (const auto& i : issues) msg += "\n  " + i;
        return msg;
      }()),
      issues_(std::move(issues)) {}

std::vector<std::string> ExperimentConfig::resolved_stages() const {
  std::vector<std::string> wanted = stages;
  if (wanted.empty()) {
    wanted = {"finetune", "sweep", "zeroshot", "eval", "report"};
    if (cross_eval) wanted.push_back("cross-eval");
  }
  std::vector<std::string> out;
  for (const auto& s : kStageOrder) {
    if (std::find(wanted.begin(), wanted.end(), s) != wanted.end()) out.push_back(s);
  }
  return out;
}

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("<file>: not valid JSON: ") + e.what()});
  }
  if (!doc.is_object()) throw ConfigError({"<file>: top level must be an object"});

  std::vector<std::string> issues;
  Reader r(issues, fs::absolute(base_dir));
  ExperimentConfig cfg;
  r.unknown_keys(doc, "", {"run_dir", "seed", "device", "model", "data", "scheme", "prompt_modes", "prompts", "train", "grid", "threshold",
                           "stages", "cross_eval", "report"});

  if (auto p = r.path(doc, "run_dir", "run_dir")) {
    cfg.run_dir = *p;
  } else if (!doc.contains("run_dir")) {
    r.issue("run_dir", "is required");
  }

  if (auto v = r.integer(doc, "seed", "seed")) {
    if (*v < 0) r.issue("seed", "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(std::max<long long>(*v, 0));
  }
  if (auto d = r.string(doc, "device", "device")) {
    if (*d == "gpu") {
      r.issue("device", "gpu requested but this build has no GPU backend; use cpu");
    } else if (*d != "cpu") {
      r.issue("device", "must be cpu or gpu");
    }
    cfg.device = *d;
  }

  if (const json* m = r.object(doc, "model", "model")) {
    r.unknown_keys(*m, "model.", {"checkpoint", "sha256"});
    if (auto c = r.string(*m, "checkpoint", "model.checkpoint")) {
      const bool builtin = c->empty() || *c == "stub" || c->rfind("stub:", 0) == 0;
      cfg.checkpoint = builtin ? *c : r.resolve(*c).string();
    }
    if (auto s = r.string(*m, "sha256", "model.sha256")) {
      const bool hex = s->size() == 64 && std::all_of(s->begin(), s->end(), [](char ch) { return std::isxdigit(static_cast<unsigned char>(ch)); });
      if (!s->empty() && !hex) r.issue("model.sha256", "must be 64 hexadecimal characters or empty");
      cfg.checkpoint_sha256 = *s;
    }
  }

  if (const json* d = r.object(doc, "data", "data")) {
    if (auto src = read_source(r, *d, "data")) cfg.data = *src;
  } else if (!doc.contains("data")) {
    r.issue("data", "is required");
  }

  if (auto s = r.parsed<Scheme>(r.string(doc, "scheme", "scheme"), "scheme", [](const std::string& v) { return parse_scheme(v); })) {
    cfg.scheme = *s;
  }

  if (doc.contains("prompt_modes")) {
    cfg.prompt_modes.clear();
    for (const auto& name : r.strings(doc, "prompt_modes", "prompt_modes")) {
      if (auto m = r.parsed<PromptMode>(std::optional{name}, "prompt_modes", [](const std::string& v) { return parse_prompt_mode(v); })) {
        if (std::find(cfg.prompt_modes.begin(), cfg.prompt_modes.end(), *m) != cfg.prompt_modes.end()) {
          r.issue("prompt_modes", "duplicate mode " + name);
        } else {
          cfg.prompt_modes.push_back(*m);
        }
      }
    }
    std::sort(cfg.prompt_modes.begin(), cfg.prompt_modes.end());
  }

  if (const json* p = r.object(doc, "prompts", "prompts")) read_prompts(r, *p, cfg.prompts);
  if (const json* t = r.object(doc, "train", "train")) read_train(r, *t, cfg.train);
  for (const auto& i : cfg.train.issues()) issues.push_back("train." + i);

  if (const json* g = r.object(doc, "grid", "grid")) {
    r.unknown_keys(*g, "grid.", {"learning_rates", "weight_decays"});
    GridSpec grid;
    if (g->contains("learning_rates")) grid.learning_rates = r.numbers(*g, "learning_rates", "grid.learning_rates");
    if (g->contains("weight_decays")) grid.weight_decays = r.numbers(*g, "weight_decays", "grid.weight_decays");
    for (std::size_t i = 0; i < grid.learning_rates.size(); ++i) {
      if (!(grid.learning_rates[i] > 0.0)) r.issue("grid.learning_rates[" + std::to_string(i) + "]", "must be > 0");
    }
    for (std::size_t i = 0; i < grid.weight_decays.size(); ++i) {
      if (!(grid.weight_decays[i] >= 0.0)) r.issue("grid.weight_decays[" + std::to_string(i) + "]", "must be >= 0");
    }
    cfg.grid = grid;
  }

  if (doc.contains("threshold")) {
    const json& t = doc.at("threshold");
    if (t.is_string() && t.get<std::string>() == "sweep") {
      cfg.threshold.sweep = true;
    } else if (t.is_number() && t.get<double>() > 0.0 && t.get<double>() < 1.0) {
      cfg.threshold.fixed = t.get<double>();
    } else {
      r.issue("threshold", "must be a number in (0, 1) or \"sweep\"");
    }
  }

  for (const auto& s : r.strings(doc, "stages", "stages")) {
    if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) {
      r.issue("stages", "unknown stage '" + s + "'");
    } else {
      cfg.stages.push_back(s);
    }
  }

  if (const json* c = r.object(doc, "cross_eval", "cross_eval")) {
    json source = *c;
    CrossEvalConfig cross;
    if (auto p = r.path(*c, "reference_run", "cross_eval.reference_run")) cross.reference_run = *p;
    source.erase("reference_run");
    if (auto src = read_source(r, source, "cross_eval")) {
      cross.target = *src;
      if (doc.contains("data") && cross.target.dataset == cfg.data.dataset) {
        r.issue("cross_eval.dataset", "must differ from data.dataset");
      }
      cfg.cross_eval = cross;
    }
  }
  const auto stages = cfg.resolved_stages();
  if (std::find(stages.begin(), stages.end(), "cross-eval") != stages.end()) {
    if (!doc.contains("cross_eval")) r.issue("cross_eval", "is required when the cross-eval stage is requested");
    if (std::find(cfg.prompt_modes.begin(), cfg.prompt_modes.end(), PromptMode::points) == cfg.prompt_modes.end()) {
      r.issue("prompt_modes", "cross-eval needs the points mode");
    }
  }

  if (const json* rep = r.object(doc, "report", "report")) {
    r.unknown_keys(*rep, "report.", {"k", "reference_values"});
    if (auto k = r.integer(*rep, "k", "report.k")) {
      if (*k < 1) r.issue("report.k", "must be >= 1");
      cfg.report.k = static_cast<int>(std::clamp<long long>(*k, 1, 1000));
    }
    if (auto b = r.boolean(*rep, "reference_values", "report.reference_values")) cfg.report.reference_values = *b;
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  cfg.train.seed = cfg.seed;
  cfg.prompts.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError({"<file>: " + path.string() + " does not exist"});
  ExperimentConfig cfg = parse_config(read_text(path), fs::absolute(path).parent_path());
  cfg.config_path = fs::absolute(path);
  return cfg;
}

namespace {

nlohmann::json source_to_json(const DataSource& src) {
  nlohmann::json j{{"dataset", to_string(src.dataset)}};
  if (!src.cache.empty()) j["cache"] = src.cache.string();
  if (!src.root.empty()) j["root"] = src.root.string();
  return j;
}

}  // namespace

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["run_dir"] = cfg.run_dir.string();
  j["seed"] = cfg.seed;
  j["device"] = cfg.device;
  j["model"] = {{"checkpoint", cfg.checkpoint}, {"sha256", cfg.checkpoint_sha256}};
  j["data"] = source_to_json(cfg.data);
  j["scheme"] = to_string(cfg.scheme);
  j["prompt_modes"] = nlohmann::json::array();
  for (PromptMode m : cfg.prompt_modes) j["prompt_modes"].push_back(to_string(m));
  j["prompts"] = {{"level", cfg.prompts.level},
                  {"k", cfg.prompts.k_per_component},
                  {"jitter", cfg.prompts.jitter},
                  {"eval_jitter", cfg.prompts.eval_jitter},
                  {"single_box", cfg.prompts.single_box}};
  const TrainConfig& t = cfg.train;
  j["train"] = {{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay}, {"epochs", t.epochs},
                {"batch_size", t.batch_size},       {"w_dice", t.w_dice},             {"w_focal", t.w_focal},
                {"focal_gamma", t.focal_gamma},     {"adam_beta1", t.adam_beta1},     {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},           {"val_threshold", t.val_threshold}};
  if (cfg.grid) j["grid"] = {{"learning_rates", cfg.grid->learning_rates}, {"weight_decays", cfg.grid->weight_decays}};
  if (cfg.threshold.sweep) {
    j["threshold"] = "sweep";
  } else {
    j["threshold"] = cfg.threshold.fixed;
  }
  j["stages"] = cfg.resolved_stages();
  if (cfg.cross_eval) {
    j["cross_eval"] = source_to_json(cfg.cross_eval->target);
    if (!cfg.cross_eval->reference_run.empty()) j["cross_eval"]["reference_run"] = cfg.cross_eval->reference_run.string();
  }
  j["report"] = {{"k", cfg.report.k}, {"reference_values", cfg.report.reference_values}};
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = config_to_json(cfg);
  j.erase("stages");
  const std::string text = j.dump();
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

}  // namespace lungsam

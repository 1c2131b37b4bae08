#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "lungsam/config.hpp"
#include "support.hpp"

using namespace lungsam;

namespace {

const fs::path kBase = "/work/exp";

std::vector<std::string> issues_of(const std::string& text) {
  try {
    parse_config(text, kBase);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool has_issue(const std::vector<std::string>& issues, const std::string& needle) {
  return std::any_of(issues.begin(), issues.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("a minimal config fills defaults and resolves paths") {
    const auto cfg = parse_config(R"({"run_dir": "runs/a", "data": {"dataset": "montgomery", "cache": "../cache"}})", kBase);
    CHECK(cfg.run_dir == fs::path("/work/exp/runs/a"));
    CHECK(cfg.data.cache == fs::path("/work/cache"));
    CHECK(cfg.data.dataset == Dataset::montgomery);
    CHECK(cfg.seed == 42);
    CHECK(cfg.scheme == Scheme::kfold_5);
    CHECK(cfg.prompt_modes == std::vector<PromptMode>{PromptMode::points});
    CHECK_FALSE(cfg.threshold.sweep);
    CHECK(cfg.report.k == 3);
    CHECK(cfg.resolved_stages() == std::vector<std::string>{"finetune", "sweep", "zeroshot", "eval", "report"});
  }

  TEST_CASE("absolute paths stay put") {
    const auto cfg = parse_config(R"({"run_dir": "/abs/run", "data": {"dataset": "shenzhen", "root": "/data/sz"}})", kBase);
    CHECK(cfg.run_dir == fs::path("/abs/run"));
    CHECK(cfg.data.root == fs::path("/data/sz"));
    CHECK(cfg.data.dataset == Dataset::shenzhen);
  }

  TEST_CASE("a negative learning rate names the field") {
    const auto issues = issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "train": {"learning_rate": -1}})");
    REQUIRE(issues.size() == 1);
    CHECK(has_issue(issues, "train.learning_rate"));
  }

  TEST_CASE("every problem is reported at once") {
    const std::string text = R"({
      "data": {"dataset": "nowhere", "cache": "c", "root": "r"},
      "train": {"epochs": 0, "bogus": 1},
      "threshold": 1.5,
      "stages": ["finetune", "dance"],
      "surprise": true
    })";
    const auto issues = issues_of(text);
    CHECK(issues.size() >= 6);
    CHECK(has_issue(issues, "run_dir: is required"));
    CHECK(has_issue(issues, "data.dataset"));
    CHECK(has_issue(issues, "not both"));
    CHECK(has_issue(issues, "train.epochs"));
    CHECK(has_issue(issues, "train.bogus: unknown key"));
    CHECK(has_issue(issues, "threshold"));
    CHECK(has_issue(issues, "unknown stage 'dance'"));
    CHECK(has_issue(issues, "surprise: unknown key"));
    try {
      parse_config(text, kBase);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("invalid config (" + std::to_string(issues.size()) + " problems)") == 0);
    }
  }

  TEST_CASE("data needs a cache or a root") {
    CHECK(has_issue(issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery"}})"), "one of 'cache' or 'root'"));
    CHECK(has_issue(issues_of(R"({"run_dir": "r"})"), "data: is required"));
  }

  TEST_CASE("threshold policy") {
    const auto sweep = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "threshold": "sweep"})", kBase);
    CHECK(sweep.threshold.sweep);
    const auto fixed = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "threshold": 0.6})", kBase);
    CHECK_FALSE(fixed.threshold.sweep);
    CHECK(fixed.threshold.fixed == 0.6);
    CHECK(has_issue(issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "threshold": "auto"})"), "threshold"));
  }

  TEST_CASE("gpu is refused with a clear message") {
    const auto issues = issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "device": "gpu"})");
    REQUIRE(issues.size() == 1);
    CHECK(has_issue(issues, "no GPU backend"));
  }

  TEST_CASE("cross-eval needs its own target dataset") {
    CHECK(has_issue(issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "stages": ["cross-eval"]})"),
                    "cross_eval: is required"));
    CHECK(has_issue(issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"},
                                  "cross_eval": {"dataset": "montgomery", "cache": "d"}})"),
                    "cross_eval"));
    const auto cfg = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"},
                                      "cross_eval": {"dataset": "shenzhen", "cache": "d", "reference_run": "sz_run"}})",
                                  kBase);
    REQUIRE(cfg.cross_eval.has_value());
    CHECK(cfg.cross_eval->reference_run == fs::path("/work/exp/sz_run"));
    const auto stages = cfg.resolved_stages();
    CHECK(std::find(stages.begin(), stages.end(), "cross-eval") != stages.end());
    CHECK(stages.back() == "report");
  }

  TEST_CASE("stages run in canonical order") {
    const auto cfg =
        parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "stages": ["report", "eval", "finetune"]})", kBase);
    CHECK(cfg.resolved_stages() == std::vector<std::string>{"finetune", "eval", "report"});
  }

  TEST_CASE("builtin checkpoints are not treated as paths") {
    const auto stub = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "model": {"checkpoint": "stub:2"}})", kBase);
    CHECK(stub.checkpoint == "stub:2");
    const auto file =
        parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "model": {"checkpoint": "stubborn.lsam"}})", kBase);
    CHECK(file.checkpoint == "/work/exp/stubborn.lsam");
    CHECK(has_issue(issues_of(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "model": {"sha256": "abc"}})"),
                    "model.sha256"));
  }

  TEST_CASE("the hash ignores stages but not settings") {
    const auto a = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "stages": ["finetune"]})", kBase);
    const auto b = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "stages": ["eval", "report"]})", kBase);
    const auto c = parse_config(R"({"run_dir": "r", "data": {"dataset": "montgomery", "cache": "c"}, "seed": 7})", kBase);
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a) != config_hash(c));
    CHECK(config_hash(a).size() == 64);
  }

  TEST_CASE("load_config resolves against the file's directory and allows comments") {
    lungsam::testing::TempDir dir;
    fs::create_directories(dir / "sub");
    {
      std::ofstream out(dir / "sub" / "exp.json");
      out << "{\n  // where results go\n  \"run_dir\": \"out\",\n  \"data\": {\"dataset\": \"montgomery\", \"cache\": \"cache\"}\n}\n";
    }
    const auto cfg = load_config(dir / "sub" / "exp.json");
    CHECK(cfg.run_dir == (dir.path() / "sub" / "out").lexically_normal());
    CHECK(cfg.data.cache == (dir.path() / "sub" / "cache").lexically_normal());
    const auto round = parse_config(config_to_json(cfg).dump(), "/elsewhere");
    CHECK(config_hash(round) == config_hash(cfg));
    CHECK_THROWS(load_config(dir / "missing.json"));
  }
}

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lungsam/report.hpp"
#include "support.hpp"

using namespace lungsam;

namespace {

MetricsSummary summary(PromptMode mode, double f1_mean, double f1_std, double iou_mean = 0.8, double iou_std = 0.01) {
  MetricsSummary s;
  s.prompt_mode = mode;
  s.f1_mean = f1_mean;
  s.f1_std = f1_std;
  s.iou_mean = iou_mean;
  s.iou_std = iou_std;
  s.n_images = 10;
  return s;
}

MetricsRecord rec(std::string id, double f1_value) {
  MetricsRecord r;
  r.sample_id = std::move(id);
  r.f1 = f1_value;
  r.iou = f1_value / (2 - f1_value);
  return r;
}

const Table* find_table(const RenderedTables& t, const std::string& id) {
  for (const auto& table : t.tables) {
    if (table.id == id) return &table;
  }
  return nullptr;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("mean_pm_std formats three decimals") {
    CHECK(mean_pm_std(0.943, 0.007) == "0.943±0.007");
    CHECK(mean_pm_std(0.97349, 0.0141) == "0.973±0.014");
    CHECK(mean_pm_std(1.0, 0.0) == "1.000±0.000");
  }

  TEST_CASE("empty inputs render dashes and warn") {
    ReportInputs in;
    const RenderedTables t = render_tables(in);
    CHECK(t.warnings > 0);
    CHECK_FALSE(t.tables.empty());
    CHECK(t.markdown.find("—") != std::string::npos);
    const Table* zs = find_table(t, "zeroshot_montgomery");
    REQUIRE(zs != nullptr);
    for (const auto& row : zs->rows) {
      for (std::size_t c = 1; c < row.size(); ++c) CHECK(row[c] == "—");
    }
    CHECK(find_table(t, "zeroshot_shenzhen") != nullptr);
  }

  TEST_CASE("U-Net comparison row") {
    ReportInputs in;
    in.datasets = {Dataset::montgomery};
    in.finetuned[{Dataset::montgomery, PromptMode::points}] = summary(PromptMode::points, 0.943, 0.007);
    const RenderedTables t = render_tables(in);
    const Table* u = find_table(t, "unet_comparison");
    REQUIRE(u != nullptr);
    REQUIRE(u->rows.size() == 1);
    CHECK(u->rows[0][0] == "Montgomery");
    CHECK(u->rows[0][1] == "0.943±0.007");
    CHECK(u->rows[0][2] == "0.973±0.014");
    REQUIRE(u->bold.size() == 1);
    CHECK(u->bold[0].second == 2);
    CHECK(find_table(t, "zeroshot_shenzhen") == nullptr);

    in.finetuned[{Dataset::montgomery, PromptMode::points}] = summary(PromptMode::points, 0.99, 0.001);
    const RenderedTables better = render_tables(in);
    CHECK(find_table(better, "unet_comparison")->bold[0].second == 1);
  }

  TEST_CASE("markdown and csv carry the same cells") {
    ReportInputs in;
    in.datasets = {Dataset::montgomery, Dataset::shenzhen};
    for (auto mode : {PromptMode::box, PromptMode::points, PromptMode::both}) {
      in.zeroshot[{Dataset::montgomery, mode}] = summary(mode, 0.5 + 0.1 * static_cast<int>(mode), 0.02);
      in.finetuned[{Dataset::shenzhen, mode}] = summary(mode, 0.81 + 0.01 * static_cast<int>(mode), 0.03);
      SweepColumn col;
      col.prompt_mode = mode;
      col.thresholds.assign(kSweepThresholds.begin(), kSweepThresholds.end());
      col.mean_f1 = {0.8, 0.9, 0.85, 0.7, 0.6};
      col.best_index = 1;
      in.sweeps[{Dataset::montgomery, mode}] = col;
    }
    const RenderedTables t = render_tables(in);
    std::size_t cells = 0;
    for (const auto& table : t.tables) {
      CHECK(t.markdown.find(table.title) != std::string::npos);
      for (const auto& row : table.rows) {
        for (std::size_t c = 1; c < row.size(); ++c) {
          ++cells;
          CHECK(t.markdown.find(row[c]) != std::string::npos);
          const std::string line = table.id + "," + row[0] + "," + table.header[c] + ",";
          CHECK(t.csv.find(line) != std::string::npos);
        }
      }
    }
    std::size_t csv_lines = 0;
    for (char ch : t.csv) csv_lines += ch == '\n';
    CHECK(csv_lines == cells + 1);
    const Table* sweep = find_table(t, "sweep_montgomery");
    REQUIRE(sweep != nullptr);
    CHECK(sweep->rows.size() == 5);
    CHECK(sweep->rows[1][1] == "0.900");
    CHECK(t.markdown.find("**0.900**") != std::string::npos);
  }

  TEST_CASE("reference values add a column") {
    ReportInputs in;
    in.datasets = {Dataset::montgomery};
    in.include_reference_values = true;
    const RenderedTables t = render_tables(in);
    const Table* u = find_table(t, "unet_comparison");
    REQUIRE(u != nullptr);
    CHECK(u->header.back() == "Reference");
    CHECK(u->rows[0].back() == "0.943±0.007");
  }

  TEST_CASE("ranking picks extremes with id tie-breaks") {
    const std::vector<MetricsRecord> records{rec("c", 0.9), rec("a", 0.9), rec("b", 0.2), rec("d", 0.5), rec("e", 0.2)};
    const auto one = rank_best_worst(records, 1);
    REQUIRE(one.size() == 2);
    CHECK(one[0].kind == "best");
    CHECK(one[0].sample_id == "a");
    CHECK(one[1].kind == "worst");
    CHECK(one[1].sample_id == "b");
    CHECK(one[0].f1 >= one[1].f1);

    const auto three = rank_best_worst(records, 3);
    REQUIRE(three.size() == 6);
    CHECK(three[1].sample_id == "c");
    CHECK(three[2].sample_id == "d");
    CHECK(three[2].rank == 3);
    CHECK(three[4].sample_id == "e");

    const auto clamped = rank_best_worst(records, 50);
    CHECK(clamped.size() == 10);
    CHECK_THROWS_AS(rank_best_worst(records, 0), std::invalid_argument);
    CHECK(rank_best_worst(std::vector<MetricsRecord>{}, 2).empty());
  }

  TEST_CASE("best/worst panels and captions are written") {
    lungsam::testing::TempDir dir;
    const auto samples = lungsam::testing::synthetic_samples(4, 5);
    std::vector<MetricsRecord> records;
    for (std::size_t i = 0; i < samples.size(); ++i) records.push_back(rec(samples[i].id, 0.5 + 0.1 * static_cast<double>(i)));
    auto lookup = [&](const std::string& id) -> const ImageSample& {
      for (const auto& s : samples) {
        if (s.id == id) return s;
      }
      throw std::out_of_range(id);
    };
    auto prediction = [&](const std::string& id) {
      const ImageSample& s = lookup(id);
      RealGrid p(s.mask.rows(), s.mask.cols());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = s.mask[i] ? 0.9 : 0.1;
      return p;
    };
    const auto panels = report_best_worst(records, lookup, prediction, 2, dir.path(), "points_");
    REQUIRE(panels.size() == 4);
    for (const auto& p : panels) {
      CHECK(fs::exists(p.path));
      CHECK(fs::file_size(p.path) > 0);
    }
    CHECK(panels[0].sample_id == "S003");
    CHECK(panels[2].sample_id == "S000");
    const std::string captions = slurp(dir / "points_captions.txt");
    CHECK(captions.find("S003") != std::string::npos);
    CHECK(captions.find("S000") != std::string::npos);
  }

  TEST_CASE("line plots are written") {
    lungsam::testing::TempDir dir;
    const std::vector<PlotSeries> series{{"loss", {1, 2, 3}, {0.9, 0.5, 0.4}}, {"f1", {1, 2, 3}, {0.2, 0.6, 0.7}, {20, 160, 20}}};
    plot_lines(dir / "curve.png", "curve", "epoch", series);
    CHECK(fs::file_size(dir / "curve.png") > 0);
  }
}

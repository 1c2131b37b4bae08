#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "lungsam/evalkit.hpp"
#include "lungsam/io.hpp"
#include "support.hpp"

using namespace lungsam;
using lungsam::testing::random_mask;

namespace {

struct Counts {
  double inter = 0, uni = 0, a = 0, b = 0;
};

// Pixel-set oracle: collect coordinates and count with std::set operations.
Counts set_counts(const ByteGrid& x, const ByteGrid& y) {
  std::set<std::pair<int, int>> sx, sy, inter, uni;
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < x.cols(); ++c) {
      if (x(r, c)) sx.insert({r, c});
      if (y(r, c)) sy.insert({r, c});
    }
  }
  std::set_intersection(sx.begin(), sx.end(), sy.begin(), sy.end(), std::inserter(inter, inter.end()));
  std::set_union(sx.begin(), sx.end(), sy.begin(), sy.end(), std::inserter(uni, uni.end()));
  return {static_cast<double>(inter.size()), static_cast<double>(uni.size()), static_cast<double>(sx.size()),
          static_cast<double>(sy.size())};
}

double pop_std(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

MetricsRecord rec(std::string id, double iou_value, double f1_value) {
  MetricsRecord r;
  r.sample_id = std::move(id);
  r.iou = iou_value;
  r.f1 = f1_value;
  return r;
}

// Ignores image and prompts: always predicts the same soft disc.
class ConstantModel final : public SegModel {
 public:
  ConstantModel() : probs_(kSide, kSide) {
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        const double d = std::hypot(r - 128.0, c - 128.0);
        probs_(r, c) = 1.0 / (1.0 + std::exp((d - 90.0) / 8.0));
      }
    }
  }
  std::string architecture() const override { return "constant"; }
  int input_resolution() const override { return kSide; }
  std::unique_ptr<SegModel> clone() const override { return std::make_unique<ConstantModel>(*this); }
  std::vector<Parameter>& parameters() override { return params_; }
  const std::vector<Parameter>& parameters() const override { return params_; }
  ImageEmbedding encode(const ByteGrid&) const override { return {}; }
  RealGrid forward(const ImageEmbedding&, const PromptSet&, std::unique_ptr<ForwardTape>*) const override { return probs_; }
  void backward(const ForwardTape&, const RealGrid&, std::vector<std::vector<double>>&) const override {}
  const RealGrid& probs() const { return probs_; }

 private:
  RealGrid probs_;
  std::vector<Parameter> params_;
};

}  // namespace

TEST_SUITE("evalkit") {
  TEST_CASE("metrics equal the pixel-set oracle on random 8x8 masks") {
    SeededRng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
      const ByteGrid a = random_mask(rng, 8, 8, rng.uniform01());
      const ByteGrid b = random_mask(rng, 8, 8, rng.uniform01());
      const Counts c = set_counts(a, b);
      const double want_iou = c.uni == 0 ? 1.0 : c.inter / c.uni;
      const double want_f1 = c.a + c.b == 0 ? 1.0 : 2.0 * c.inter / (c.a + c.b);
      CHECK(std::abs(iou(a, b) - want_iou) <= 1e-12);
      CHECK(std::abs(f1(a, b) - want_f1) <= 1e-12);
      CHECK(iou(a, b) == iou(b, a));
      CHECK(f1(a, b) == f1(b, a));
      CHECK(std::abs(f1(a, b) - 2 * iou(a, b) / (1 + iou(a, b))) <= 1e-12);
    }
  }

  TEST_CASE("metric edge cases") {
    const ByteGrid empty(6, 6);
    const ByteGrid full(6, 6, 1);
    CHECK(iou(empty, empty) == 1.0);
    CHECK(f1(empty, empty) == 1.0);
    CHECK(iou(full, full) == 1.0);
    CHECK(f1(full, full) == 1.0);
    const ByteGrid left = lungsam::testing::rect_mask(6, 6, 0, 0, 5, 2);
    const ByteGrid right = lungsam::testing::rect_mask(6, 6, 0, 3, 5, 5);
    CHECK(iou(left, right) == 0.0);
    CHECK(f1(left, right) == 0.0);
    // Prediction covers exactly half of the truth with no false positives.
    const ByteGrid half = lungsam::testing::rect_mask(6, 6, 0, 0, 2, 2);
    CHECK(f1(left, half) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(iou(left, half) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(iou(empty, ByteGrid(5, 6)), std::invalid_argument);
    CHECK_THROWS_AS(f1(empty, ByteGrid(6, 5)), std::invalid_argument);
  }

  TEST_CASE("binarize uses >= and validates the threshold") {
    RealGrid p(1, 3);
    p[0] = 0.65;
    p[1] = 0.6499999;
    p[2] = 0.9;
    const HardMask h = binarize(p, 0.65);
    CHECK(h.pixels[0] == 1);
    CHECK(h.pixels[1] == 0);
    CHECK(h.pixels[2] == 1);
    CHECK(h.threshold_used == 0.65);
    CHECK(foreground_count(binarize(RealGrid(4, 4, 0.4), 0.5).pixels) == 0);
    CHECK_THROWS(binarize(p, 0.0));
    CHECK_THROWS(binarize(p, 1.0));
  }

  TEST_CASE("foreground shrinks as the threshold rises") {
    SeededRng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      RealGrid p(32, 32);
      for (auto& v : p.values()) v = rng.uniform01();
      std::size_t last = std::numeric_limits<std::size_t>::max();
      for (double t : kSweepThresholds) {
        const std::size_t n = foreground_count(binarize(p, t).pixels);
        CHECK(n <= last);
        last = n;
      }
    }
  }

  TEST_CASE("constant 0.6 masks on full ground truth") {
    const std::vector<RealGrid> probs(3, RealGrid(16, 16, 0.6));
    const std::vector<ByteGrid> targets(3, ByteGrid(16, 16, 1));
    const SweepColumn s = sweep_soft_masks(probs, targets, kSweepThresholds, PromptMode::box);
    REQUIRE(s.mean_f1.size() == 5);
    CHECK(s.mean_f1[0] == 1.0);
    CHECK(s.mean_f1[1] == 1.0);
    CHECK(s.mean_f1[2] == 1.0);
    CHECK(s.mean_f1[3] == 0.0);
    CHECK(s.mean_f1[4] == 0.0);
    CHECK(s.best_index == 0);
    CHECK(s.best_threshold() == 0.5);
    CHECK_THROWS(sweep_soft_masks({}, {}, kSweepThresholds, PromptMode::box));
  }

  TEST_CASE("summaries use population std over fold means") {
    const std::vector<std::vector<MetricsRecord>> folds{
        {rec("b", 0.5, 0.6), rec("a", 0.7, 0.8)},
        {rec("c", 0.9, 0.95)},
        {rec("d", 0.2, 0.3), rec("e", 0.4, 0.5), rec("f", 0.6, 0.7)},
    };
    const MetricsSummary s = summarize("x", folds);
    const std::vector<double> f1_means{0.7, 0.95, 0.5};
    const std::vector<double> iou_means{0.6, 0.9, 0.4};
    REQUIRE(s.fold_f1.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(s.fold_f1[k] == doctest::Approx(f1_means[k]).epsilon(1e-14));
      CHECK(s.fold_iou[k] == doctest::Approx(iou_means[k]).epsilon(1e-14));
    }
    CHECK(s.f1_mean == doctest::Approx((0.7 + 0.95 + 0.5) / 3).epsilon(1e-14));
    CHECK(s.f1_std == doctest::Approx(pop_std(f1_means)).epsilon(1e-12));
    CHECK(s.iou_std == doctest::Approx(pop_std(iou_means)).epsilon(1e-12));
    CHECK(s.n_images == 6);
    CHECK(s.std_over == "folds");
    CHECK(s.label == "x");
  }

  TEST_CASE("a single fold reports std over images") {
    const MetricsSummary s = summarize("one", {{rec("a", 0.5, 0.6), rec("b", 0.7, 0.9)}});
    CHECK(s.std_over == "images");
    CHECK(s.f1_mean == doctest::Approx(0.75));
    CHECK(s.f1_std == doctest::Approx(0.15).epsilon(1e-12));
  }

  TEST_CASE("summaries do not depend on record order") {
    std::vector<MetricsRecord> a{rec("x1", 0.31, 0.47), rec("x2", 0.83, 0.91), rec("x3", 0.12, 0.2)};
    std::vector<MetricsRecord> b{a[2], a[0], a[1]};
    const MetricsSummary sa = summarize("s", {a, a});
    const MetricsSummary sb = summarize("s", {b, b});
    CHECK(sa.f1_mean == sb.f1_mean);
    CHECK(sa.iou_std == sb.iou_std);
  }

  TEST_CASE("a constant model's fold scores match direct computation") {
    const auto samples = lungsam::testing::synthetic_samples(12, 40);
    const FoldPlan plan = make_fold_plan(samples, Scheme::kfold_5, 42);
    const SegModelHandle model(std::make_unique<ConstantModel>(), "constant");
    EvalOptions options;
    options.prompts.mode = PromptMode::points;
    const FoldedEvaluation ev = evaluate_fixed_model(model, samples, plan, options, "const");
    const ConstantModel reference;
    const HardMask predicted = binarize(reference.probs(), 0.5);
    std::vector<double> fold_means;
    for (int k = 0; k < kFolds; ++k) {
      double sum = 0;
      const auto ids = plan.fold_ids(k);
      for (const auto& id : ids) {
        const auto it = std::find_if(samples.begin(), samples.end(), [&](auto& s) { return s.id == id; });
        sum += f1(it->mask, predicted.pixels);
      }
      fold_means.push_back(sum / static_cast<double>(ids.size()));
    }
    REQUIRE(ev.summary.fold_f1.size() == 5);
    for (int k = 0; k < kFolds; ++k) CHECK(ev.summary.fold_f1[static_cast<std::size_t>(k)] == doctest::Approx(fold_means[static_cast<std::size_t>(k)]).epsilon(1e-12));
    CHECK(ev.summary.f1_std == doctest::Approx(pop_std(fold_means)).epsilon(1e-9));
    CHECK(ev.summary.label == "const");
  }

  TEST_CASE("every sample is tested exactly once across folds") {
    const auto samples = lungsam::testing::synthetic_samples(11, 41);
    const FoldPlan plan = make_fold_plan(samples, Scheme::kfold_5, 42);
    const auto ev = zero_shot_eval(load_model("stub"), samples, plan, std::vector<PromptMode>{PromptMode::box, PromptMode::points},
                                   EvalOptions{});
    REQUIRE(ev.size() == 2);
    for (const auto& e : ev) {
      std::multiset<std::string> seen;
      for (const auto& fold : e.folds) {
        for (const auto& r : fold) seen.insert(r.sample_id);
      }
      CHECK(seen.size() == 11);
      CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 11);
      CHECK(e.summary.label == "zeroshot");
      for (const auto& fold : e.folds) {
        for (const auto& r : fold) CHECK(std::abs(r.f1 - 2 * r.iou / (1 + r.iou)) <= 1e-12);
      }
    }
    CHECK(ev[0].summary.prompt_mode == PromptMode::box);
  }

  TEST_CASE("same-dataset transfer equals the standard evaluation path") {
    const auto samples = lungsam::testing::synthetic_samples(10, 42);
    const FoldPlan plan = make_fold_plan(samples, Scheme::kfold_5, 42);
    const SegModelHandle model = load_model("stub:1");
    EvalOptions options;
    const CrossDatasetResult cross = cross_dataset_eval(model, Dataset::montgomery, samples, plan, options);
    options.prompts.mode = PromptMode::points;
    const FoldedEvaluation direct = evaluate_fixed_model(model, samples, plan, options, "direct");
    CHECK(cross.transfer.summary.f1_mean == direct.summary.f1_mean);
    CHECK(cross.transfer.summary.iou_std == direct.summary.iou_std);
    CHECK(cross.transfer.summary.label == "montgomery->montgomery");
    CHECK_FALSE(cross.reference.has_value());
  }

  TEST_CASE("persisted float32 predictions reproduce the records") {
    lungsam::testing::TempDir dir;
    const auto samples = lungsam::testing::synthetic_samples(5, 43);
    const FoldPlan plan = make_fold_plan(samples, Scheme::holdout_60_20_20, 42);
    PromptOptions opt;
    opt.mode = PromptMode::both;
    const PromptTable prompts = build_prompts(samples, plan.roles(), opt);
    const auto records = evaluate(load_model("stub"), samples, prompts, 0.55, 0, [&](int, const ImageSample& s, const SoftMask& m) {
      Grid<float> g(m.probs.rows(), m.probs.cols());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(m.probs[i]);
      write_npy_f32(dir / (s.id + ".npy"), g);
    });
    REQUIRE(records.size() == 5);
    CHECK(std::is_sorted(records.begin(), records.end(), [](auto& a, auto& b) { return a.sample_id < b.sample_id; }));
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Grid<float> g = read_npy_f32(dir / (samples[i].id + ".npy"));
      RealGrid p(g.rows(), g.cols());
      for (std::size_t j = 0; j < g.size(); ++j) p[j] = g[j];
      const HardMask h = binarize(p, 0.55);
      CHECK(records[i].f1 == f1(samples[i].mask, h.pixels));
      CHECK(records[i].iou == iou(samples[i].mask, h.pixels));
      CHECK(records[i].threshold == 0.55);
    }
  }

  TEST_CASE("cross-validation trains per fold and honours the sweep policy") {
    const auto samples = lungsam::testing::synthetic_samples(10, 44);
    const FoldPlan plan = make_fold_plan(samples, Scheme::kfold_5, 42);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-3;
    EvalOptions options;
    options.threshold.sweep = true;
    const FoldedEvaluation ev = cross_validate([] { return load_model("stub"); }, samples, plan, cfg, options);
    CHECK(ev.folds.size() == 5);
    CHECK(ev.curves.size() == 5);
    REQUIRE(ev.thresholds_used.size() == 5);
    for (double t : ev.thresholds_used) {
      CHECK(std::find(kSweepThresholds.begin(), kSweepThresholds.end(), t) != kSweepThresholds.end());
    }
    CHECK(ev.summary.label == "finetuned");
    CHECK(ev.summary.n_images == 10);
    const FoldPlan holdout = make_fold_plan(samples, Scheme::holdout_60_20_20, 42);
    CHECK_THROWS(cross_validate([] { return load_model("stub"); }, samples, holdout, cfg, options));
  }

  TEST_CASE("CSV round trips are exact") {
    std::vector<MetricsRecord> records{rec("a", 1.0 / 3.0, 0.5), rec("b", 0.123456789012345, 0.9)};
    records[1].prompt_mode = PromptMode::both;
    records[1].dataset = Dataset::shenzhen;
    records[1].threshold = 0.65;
    const auto back = records_from_csv(records_to_csv(records));
    REQUIRE(back.size() == 2);
    CHECK(back[0].iou == records[0].iou);
    CHECK(back[1].f1 == records[1].f1);
    CHECK(back[1].dataset == Dataset::shenzhen);
    CHECK(back[1].prompt_mode == PromptMode::both);
    CHECK(back[1].threshold == 0.65);

    const MetricsSummary s = summarize("lbl", {{records[0]}, {records[1]}});
    const auto sb = summaries_from_csv(summaries_to_csv(std::vector<MetricsSummary>{s}));
    REQUIRE(sb.size() == 1);
    CHECK(sb[0].f1_mean == s.f1_mean);
    CHECK(sb[0].iou_std == s.iou_std);
    CHECK(sb[0].fold_f1 == s.fold_f1);
    CHECK(sb[0].n_images == s.n_images);
    CHECK(sb[0].std_over == s.std_over);

    const SweepColumn col = sweep_soft_masks(std::vector<RealGrid>{RealGrid(4, 4, 0.57)}, std::vector<ByteGrid>{ByteGrid(4, 4, 1)},
                                             kSweepThresholds, PromptMode::points);
    const auto cb = sweep_from_csv(sweep_to_csv(std::vector<SweepColumn>{col}));
    REQUIRE(cb.size() == 1);
    CHECK(cb[0].mean_f1 == col.mean_f1);
    CHECK(cb[0].best_index == col.best_index);
    CHECK(cb[0].thresholds == col.thresholds);
  }
}

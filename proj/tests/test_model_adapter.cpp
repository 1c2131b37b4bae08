#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <limits>

#include "lungsam/finetune.hpp"
#include "lungsam/io.hpp"
#include "lungsam/model_adapter.hpp"
#include "lungsam/prompt_gen.hpp"
#include "lungsam/stub_model.hpp"
#include "support.hpp"

using namespace lungsam;
using lungsam::testing::TempDir;

namespace {

PromptSet points_prompt(const ImageSample& s) {
  const PromptSet boxes = extract_box(s.mask, 0, 0);
  PromptSet p;
  p.mode = PromptMode::points;
  for (const auto& b : boxes.boxes) p.points.push_back({(b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2, 1});
  return p;
}

std::vector<Parameter> snapshot(const SegModelHandle& h) { return h.model().parameters(); }

}  // namespace

TEST_SUITE("model_adapter") {
  TEST_CASE("census: a small trainable decoder inside a frozen model") {
    const SegModelHandle h = load_model("stub");
    const ParameterCensus c = h.census();
    CHECK(c.n_trainable < c.n_total);
    CHECK(static_cast<double>(c.n_trainable) / static_cast<double>(c.n_total) < 0.1);
    SegModelHandle copy = h;
    std::size_t sum = 0;
    for (const auto& v : trainable_parameters(copy)) sum += v.values.size();
    CHECK(sum == c.n_trainable);
    std::size_t decoder = 0;
    for (const auto& p : h.model().parameters()) {
      if (p.component == ModelComponent::mask_decoder) decoder += p.values.size();
    }
    CHECK(decoder == c.n_trainable);
    CHECK(load_model("stub").census() == c);
    CHECK(h.trainable_scope() == TrainableScope::decoder_only);
    CHECK(h.input_resolution() == kSide);
  }

  TEST_CASE("predictions are deterministic and bounded") {
    const SegModelHandle h = load_model("stub");
    const auto samples = lungsam::testing::synthetic_samples(3, 12);
    const PromptSet p = points_prompt(samples[0]);
    const SoftMask a = predict(h, samples[0], p);
    const SoftMask b = predict(h, samples[0], p);
    CHECK(a.probs == b.probs);
    CHECK(a.probs.rows() == kSide);
    CHECK(a.probs.cols() == kSide);
    CHECK(a.sample_id == samples[0].id);
    CHECK(a.prompt_mode == PromptMode::points);
  }

  TEST_CASE("probabilities stay in [0,1] for random images and prompts") {
    const SegModelHandle h = load_model("stub:5");
    SeededRng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      ImageSample s;
      s.id = "r" + std::to_string(trial);
      s.image = ByteGrid(kSide, kSide);
      for (auto& v : s.image.values()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
      PromptSet p;
      p.mode = static_cast<PromptMode>(trial % 3);
      if (p.mode != PromptMode::box) {
        for (int i = 0; i < 1 + trial % 4; ++i) {
          p.points.push_back({static_cast<int>(rng.uniform_int(0, 255)), static_cast<int>(rng.uniform_int(0, 255)), 1});
        }
      }
      if (p.mode != PromptMode::points) {
        const int x0 = static_cast<int>(rng.uniform_int(0, 200)), y0 = static_cast<int>(rng.uniform_int(0, 200));
        p.boxes.push_back({x0, y0, x0 + static_cast<int>(rng.uniform_int(1, 55)), y0 + static_cast<int>(rng.uniform_int(1, 55))});
      }
      const SoftMask m = predict(h, s, p);
      for (double v : m.probs.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
  }

  TEST_CASE("moving a box off the lungs changes the output") {
    const SegModelHandle h = load_model("stub");
    const auto s = lungsam::testing::synthetic_samples(1, 3)[0];
    PromptSet on = extract_box(s.mask, 0, 0);
    PromptSet off;
    off.mode = PromptMode::box;
    off.boxes = {{2, 2, 30, 30}};
    const SoftMask a = predict(h, s, on);
    const SoftMask b = predict(h, s, off);
    double diff = 0;
    for (std::size_t i = 0; i < a.probs.size(); ++i) diff += std::abs(a.probs[i] - b.probs[i]);
    CHECK(diff / static_cast<double>(a.probs.size()) > 0.05);
  }

  TEST_CASE("two boxes merge by pixelwise maximum") {
    const SegModelHandle h = load_model("stub");
    const auto s = lungsam::testing::synthetic_samples(1, 3)[0];
    const PromptSet both = extract_box(s.mask, 0, 0);
    REQUIRE(both.boxes.size() == 2);
    const SoftMask merged = predict(h, s, both);
    for (const Box& b : both.boxes) {
      PromptSet one;
      one.mode = PromptMode::box;
      one.boxes = {b};
      const SoftMask single = predict(h, s, one);
      for (std::size_t i = 0; i < merged.probs.size(); ++i) REQUIRE(merged.probs[i] >= single.probs[i]);
    }
  }

  TEST_CASE("empty and invalid prompts are rejected") {
    const SegModelHandle h = load_model("stub");
    const auto s = lungsam::testing::synthetic_samples(1, 3)[0];
    CHECK_THROWS_AS(predict(h, s, PromptSet{}), std::invalid_argument);
    PromptSet bad;
    bad.mode = PromptMode::box;
    bad.boxes = {{10, 10, 5, 20}};
    CHECK_THROWS_AS(predict(h, s, bad), std::invalid_argument);
  }

  TEST_CASE("an optimizer step leaves encoders bit-identical and moves the decoder") {
    SegModelHandle h = load_model("stub");
    const auto samples = lungsam::testing::synthetic_samples(2, 9);
    const auto before = snapshot(h);
    const auto& model = h.model();
    std::vector<std::vector<double>> grads;
    auto views = trainable_parameters(h);
    std::vector<std::size_t> sizes;
    for (const auto& v : views) {
      grads.emplace_back(v.values.size(), 0.0);
      sizes.push_back(v.values.size());
    }
    for (const auto& s : samples) {
      const ImageEmbedding emb = model.encode(s.image);
      std::unique_ptr<ForwardTape> tape;
      const RealGrid probs = model.forward(emb, points_prompt(s), &tape);
      RealGrid g;
      dice_focal_loss(probs, s.mask, 1.0, 1.0, 2.0, &g);
      model.backward(*tape, g, grads);
    }
    AdamOptimizer opt(sizes, 1e-3, 0.0, 0.9, 0.999, 1e-8);
    opt.step(views, grads);
    const auto after = snapshot(h);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (before[i].component == ModelComponent::mask_decoder) {
        for (std::size_t j = 0; j < before[i].values.size(); ++j) changed += before[i].values[j] != after[i].values[j];
      } else {
        CHECK(before[i].values == after[i].values);
      }
    }
    CHECK(changed >= 1);
  }

  TEST_CASE("decoder backward matches finite differences") {
    SegModelHandle h = load_model("stub:2");
    const auto s = lungsam::testing::synthetic_samples(1, 5)[0];
    const ImageEmbedding emb = h.model().encode(s.image);
    PromptSet prompt = points_prompt(s);
    SeededRng rng(4);
    RealGrid weights(kSide, kSide);
    for (auto& w : weights.values()) w = rng.uniform(-1.0, 1.0);
    auto objective = [&] {
      const RealGrid p = h.model().forward(emb, prompt);
      double acc = 0;
      for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * weights[i];
      return acc;
    };
    std::unique_ptr<ForwardTape> tape;
    h.model().forward(emb, prompt, &tape);
    auto views = trainable_parameters(h);
    std::vector<std::vector<double>> grads;
    for (const auto& v : views) grads.emplace_back(v.values.size(), 0.0);
    h.model().backward(*tape, weights, grads);
    for (std::size_t t = 0; t < views.size(); ++t) {
      for (std::size_t j : {std::size_t{0}, views[t].values.size() / 2, views[t].values.size() - 1}) {
        double& w = views[t].values[j];
        const double orig = w;
        const double analytic = grads[t][j];
        // The decoder has ReLU kinks; a step that straddles one spoils that estimate only,
        // so the analytic value has to agree at one of several step sizes.
        double best = std::numeric_limits<double>::infinity();
        for (double step : {1e-5, 1e-6, 3e-7}) {
          w = orig + step;
          const double up = objective();
          w = orig - step;
          const double down = objective();
          w = orig;
          const double numeric = (up - down) / (2 * step);
          best = std::min(best, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
        }
        CHECK(best <= 1e-5);
      }
    }
  }

  TEST_CASE("checkpoint round trip reproduces predictions") {
    TempDir dir;
    const SegModelHandle h = load_model("stub:11");
    save_checkpoint(h, dir / "m.lsam", R"({"note":"test"})");
    const SegModelHandle back = load_model((dir / "m.lsam").string());
    CHECK(back.census() == h.census());
    const auto s = lungsam::testing::synthetic_samples(1, 1)[0];
    CHECK(predict(back, s, points_prompt(s)).probs == predict(h, s, points_prompt(s)).probs);
    CHECK_NOTHROW(load_model((dir / "m.lsam").string(), sha256_file(dir / "m.lsam")));
    CHECK_THROWS_AS(load_model((dir / "m.lsam").string(), std::string(64, '0')), CheckpointError);
  }

  TEST_CASE("a corrupted checkpoint fails its checksum") {
    TempDir dir;
    save_checkpoint(load_model("stub"), dir / "m.lsam");
    std::string bytes = read_text(dir / "m.lsam");
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
    {
      std::ofstream out(dir / "m.lsam", std::ios::binary | std::ios::trunc);
      out << bytes;
    }
    try {
      load_model((dir / "m.lsam").string());
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }

  TEST_CASE("missing checkpoints explain how to get one") {
    ::unsetenv("SEG_CHECKPOINT");
    try {
      load_model("");
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("SEG_CHECKPOINT") != std::string::npos);
    }
    CHECK_THROWS_AS(load_model("/nonexistent/model.lsam"), CheckpointError);
    CHECK_THROWS_AS(load_model("stub:abc"), CheckpointError);
    ::setenv("SEG_CHECKPOINT", "stub:3", 1);
    CHECK(load_model("").checkpoint_id() == "stub:3");
    ::unsetenv("SEG_CHECKPOINT");
  }

  TEST_CASE("handles copy deeply") {
    SegModelHandle a = load_model("stub");
    SegModelHandle b = a;
    trainable_parameters(b)[0].values[0] += 1.0;
    CHECK(trainable_parameters(a)[0].values[0] != trainable_parameters(b)[0].values[0]);
  }
}

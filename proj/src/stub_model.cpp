#include "lungsam/stub_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lungsam/rng.hpp"

namespace lungsam {

namespace {

constexpr int kF = StubModel::kFeatureSide;
constexpr int kPixels = kF * kF;
constexpr int kScale = kSide / kF;
constexpr int kDecoderIn = StubModel::kEmbedChannels + StubModel::kPromptChannels;

// Model-native input normalization (RGB mean/std on the 0..255 scale).
constexpr std::array<double, 3> kPixelMean = {123.675, 116.28, 103.53};
constexpr std::array<double, 3> kPixelStd = {58.395, 57.12, 57.375};

struct Slot {
  const char* name;
  ModelComponent component;
  std::vector<int> shape;
};

enum Index : std::size_t {
  kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B, kConv4W, kConv4B, kNeckW, kNeckB,
  kPointSigma, kBoxTau, kPromptGain,
  kHiddenW, kHiddenB, kOutW, kOutB,
  kSlotCount
};

const std::vector<Slot>& layout() {
  using C = ModelComponent;
  static const std::vector<Slot> slots = {
      {"image_encoder.conv1.weight", C::image_encoder, {8, 3, 3, 3}},
      {"image_encoder.conv1.bias", C::image_encoder, {8}},
      {"image_encoder.conv2.weight", C::image_encoder, {16, 8, 3, 3}},
      {"image_encoder.conv2.bias", C::image_encoder, {16}},
      {"image_encoder.conv3.weight", C::image_encoder, {16, 16, 3, 3}},
      {"image_encoder.conv3.bias", C::image_encoder, {16}},
      {"image_encoder.conv4.weight", C::image_encoder, {16, 16, 3, 3}},
      {"image_encoder.conv4.bias", C::image_encoder, {16}},
      {"image_encoder.neck.weight", C::image_encoder, {16, 16}},
      {"image_encoder.neck.bias", C::image_encoder, {16}},
      {"prompt_encoder.point_sigma", C::prompt_encoder, {3}},
      {"prompt_encoder.box_tau", C::prompt_encoder, {1}},
      {"prompt_encoder.gain", C::prompt_encoder, {StubModel::kPromptChannels}},
      {"mask_decoder.hidden.weight", C::mask_decoder, {StubModel::kHidden, kDecoderIn}},
      {"mask_decoder.hidden.bias", C::mask_decoder, {StubModel::kHidden}},
      {"mask_decoder.out.weight", C::mask_decoder, {StubModel::kHidden}},
      {"mask_decoder.out.bias", C::mask_decoder, {1}},
  };
  return slots;
}

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// 3x3 zero-padded convolution followed by tanh.
std::vector<double> conv3x3_tanh(const std::vector<double>& in, int c_in, const std::vector<double>& w,
                                 const std::vector<double>& b, int c_out) {
  std::vector<double> out(static_cast<std::size_t>(c_out) * kPixels);
  for (int o = 0; o < c_out; ++o) {
    double* dst = &out[static_cast<std::size_t>(o) * kPixels];
    std::fill(dst, dst + kPixels, b[static_cast<std::size_t>(o)]);
    for (int i = 0; i < c_in; ++i) {
      const double* src = &in[static_cast<std::size_t>(i) * kPixels];
      const double* k = &w[(static_cast<std::size_t>(o) * c_in + i) * 9];
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double kv = k[(dy + 1) * 3 + (dx + 1)];
          for (int r = std::max(0, -dy); r < std::min(kF, kF - dy); ++r) {
            const double* row = src + (r + dy) * kF + dx;
            double* out_row = dst + r * kF;
            for (int c = std::max(0, -dx); c < std::min(kF, kF - dx); ++c) out_row[c] += kv * row[c];
          }
        }
      }
    }
    for (int p = 0; p < kPixels; ++p) dst[p] = std::tanh(dst[p]);
  }
  return out;
}

// Bilinear 64 -> 256 resampling taps (half-pixel centres, edge clamped).
struct Taps {
  std::array<int, kSide> lo{};
  std::array<int, kSide> hi{};
  std::array<double, kSide> w_hi{};
};

const Taps& taps() {
  static const Taps t = [] {
    Taps out;
    for (int i = 0; i < kSide; ++i) {
      double src = (i + 0.5) / kScale - 0.5;
      if (src < 0) src = 0;
      const int lo = std::min(static_cast<int>(std::floor(src)), kF - 1);
      out.lo[static_cast<std::size_t>(i)] = lo;
      out.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, kF - 1);
      out.w_hi[static_cast<std::size_t>(i)] = src - lo;
    }
    return out;
  }();
  return t;
}

RealGrid upsample(const std::vector<double>& logits64) {
  const Taps& t = taps();
  std::vector<double> rows(static_cast<std::size_t>(kSide) * kF);
  for (int r = 0; r < kSide; ++r) {
    const double w1 = t.w_hi[static_cast<std::size_t>(r)];
    const double* a = &logits64[static_cast<std::size_t>(t.lo[static_cast<std::size_t>(r)]) * kF];
    const double* b = &logits64[static_cast<std::size_t>(t.hi[static_cast<std::size_t>(r)]) * kF];
    for (int c = 0; c < kF; ++c) rows[static_cast<std::size_t>(r) * kF + c] = (1 - w1) * a[c] + w1 * b[c];
  }
  RealGrid out(kSide, kSide);
  for (int r = 0; r < kSide; ++r) {
    const double* row = &rows[static_cast<std::size_t>(r) * kF];
    for (int c = 0; c < kSide; ++c) {
      const double w1 = t.w_hi[static_cast<std::size_t>(c)];
      out(r, c) = (1 - w1) * row[t.lo[static_cast<std::size_t>(c)]] + w1 * row[t.hi[static_cast<std::size_t>(c)]];
    }
  }
  return out;
}

// Adjoint of upsample().
std::vector<double> upsample_adjoint(const RealGrid& grad256) {
  const Taps& t = taps();
  std::vector<double> rows(static_cast<std::size_t>(kSide) * kF, 0.0);
  for (int r = 0; r < kSide; ++r) {
    double* row = &rows[static_cast<std::size_t>(r) * kF];
    for (int c = 0; c < kSide; ++c) {
      const double g = grad256(r, c);
      if (g == 0.0) continue;
      const double w1 = t.w_hi[static_cast<std::size_t>(c)];
      row[t.lo[static_cast<std::size_t>(c)]] += (1 - w1) * g;
      row[t.hi[static_cast<std::size_t>(c)]] += w1 * g;
    }
  }
  std::vector<double> out(kPixels, 0.0);
  for (int r = 0; r < kSide; ++r) {
    const double w1 = t.w_hi[static_cast<std::size_t>(r)];
    double* a = &out[static_cast<std::size_t>(t.lo[static_cast<std::size_t>(r)]) * kF];
    double* b = &out[static_cast<std::size_t>(t.hi[static_cast<std::size_t>(r)]) * kF];
    const double* row = &rows[static_cast<std::size_t>(r) * kF];
    for (int c = 0; c < kF; ++c) {
      a[c] += (1 - w1) * row[c];
      b[c] += w1 * row[c];
    }
  }
  return out;
}

// Position of a 256-frame pixel coordinate on the 64x64 feature grid.
double to_feature(double v) { return (v + 0.5) / kScale - 0.5; }

struct GroupState {
  std::vector<double> prompt;  // kPromptChannels x kPixels
  std::vector<double> pre;     // kPixels x kHidden, before ReLU
  RealGrid logits;             // kSide x kSide
};

struct StubTape final : ForwardTape {
  const ImageEmbedding* embedding = nullptr;
  std::vector<GroupState> groups;
  std::vector<std::uint8_t> winner;  // group index that attains the pixelwise max
  RealGrid probs;
};

}  // namespace

StubModel::StubModel(std::vector<Parameter> parameters) : params_(std::move(parameters)) {}

std::unique_ptr<StubModel> StubModel::create(std::uint64_t seed) {
  SeededRng rng(mix_seed(seed, stable_hash(kArchitecture)));
  std::vector<Parameter> params;
  for (const auto& slot : layout()) {
    Parameter p{slot.name, slot.component, slot.shape, std::vector<double>(element_count(slot.shape), 0.0)};
    params.push_back(std::move(p));
  }
  auto normal_fill = [&](std::size_t index, double stddev) {
    for (auto& v : params[index].values) v = stddev * rng.normal();
  };
  normal_fill(kConv1W, 1.0 / std::sqrt(27.0));
  normal_fill(kConv2W, 1.0 / std::sqrt(72.0));
  normal_fill(kConv3W, 1.0 / std::sqrt(144.0));
  normal_fill(kConv4W, 1.0 / std::sqrt(144.0));
  normal_fill(kNeckW, 1.0 / std::sqrt(16.0));
  params[kPointSigma].values = {2.0, 4.0, 8.0};
  params[kBoxTau].values = {1.0};
  params[kPromptGain].values = {1.0, 1.0, 1.0, 1.0, 1.0};

  // Decoder: small random weights plus one unit that follows the prompt maps, so the
  // untrained model already segments roughly where it is prompted.
  normal_fill(kHiddenW, 0.05);
  normal_fill(kOutW, 0.05);
  auto& hidden = params[kHiddenW].values;
  const std::array<double, kPromptChannels> follow = {0.6, 0.6, 0.6, 2.0, 0.5};
  for (int c = 0; c < kPromptChannels; ++c) hidden[static_cast<std::size_t>(kEmbedChannels + c)] = follow[static_cast<std::size_t>(c)];
  params[kOutW].values[0] = 4.0;
  params[kOutB].values[0] = -3.0;
  return std::unique_ptr<StubModel>(new StubModel(std::move(params)));
}

std::unique_ptr<StubModel> StubModel::from_parameters(std::vector<Parameter> parameters) {
  const auto& slots = layout();
  if (parameters.size() != slots.size()) throw CheckpointError("stub checkpoint: expected " + std::to_string(slots.size()) + " tensors");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& p = parameters[i];
    if (p.name != slots[i].name || p.component != slots[i].component || p.shape != slots[i].shape ||
        p.values.size() != element_count(p.shape)) {
      throw CheckpointError("stub checkpoint: unexpected tensor '" + p.name + "'");
    }
  }
  return std::unique_ptr<StubModel>(new StubModel(std::move(parameters)));
}

std::unique_ptr<SegModel> StubModel::clone() const { return std::unique_ptr<SegModel>(new StubModel(params_)); }

ImageEmbedding StubModel::encode(const ByteGrid& image) const {
  if (image.rows() != kSide || image.cols() != kSide) throw std::invalid_argument("encode: image must be 256x256");
  // Grey replicated to three normalized channels, 4x4 average pooled.
  std::vector<double> x(3 * kPixels, 0.0);
  for (int r = 0; r < kSide; ++r) {
    for (int c = 0; c < kSide; ++c) {
      const double v = image(r, c);
      const std::size_t p = static_cast<std::size_t>(r / kScale) * kF + static_cast<std::size_t>(c / kScale);
      for (std::size_t ch = 0; ch < 3; ++ch) x[ch * kPixels + p] += (v - kPixelMean[ch]) / kPixelStd[ch];
    }
  }
  for (auto& v : x) v /= kScale * kScale;

  auto h = conv3x3_tanh(x, 3, param(kConv1W).values, param(kConv1B).values, 8);
  h = conv3x3_tanh(h, 8, param(kConv2W).values, param(kConv2B).values, 16);
  h = conv3x3_tanh(h, 16, param(kConv3W).values, param(kConv3B).values, 16);
  h = conv3x3_tanh(h, 16, param(kConv4W).values, param(kConv4B).values, 16);

  ImageEmbedding e;
  e.channels = kEmbedChannels;
  e.rows = kF;
  e.cols = kF;
  e.values.assign(static_cast<std::size_t>(kEmbedChannels) * kPixels, 0.0);
  const auto& w = param(kNeckW).values;
  const auto& b = param(kNeckB).values;
  for (int o = 0; o < kEmbedChannels; ++o) {
    double* dst = &e.values[static_cast<std::size_t>(o) * kPixels];
    std::fill(dst, dst + kPixels, b[static_cast<std::size_t>(o)]);
    for (int i = 0; i < 16; ++i) {
      const double wv = w[static_cast<std::size_t>(o) * 16 + static_cast<std::size_t>(i)];
      const double* src = &h[static_cast<std::size_t>(i) * kPixels];
      for (int p = 0; p < kPixels; ++p) dst[p] += wv * src[p];
    }
  }
  return e;
}

std::vector<double> StubModel::prompt_features(std::span<const Point> points, const Box* box) const {
  std::vector<double> maps(static_cast<std::size_t>(kPromptChannels) * kPixels, 0.0);
  const auto& sigma = param(kPointSigma).values;
  const auto& gain = param(kPromptGain).values;
  const double tau = param(kBoxTau).values[0];
  for (int r = 0; r < kF; ++r) {
    for (int c = 0; c < kF; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * kF + static_cast<std::size_t>(c);
      for (const auto& pt : points) {
        const double dx = c - to_feature(pt.x);
        const double dy = r - to_feature(pt.y);
        const double d2 = dx * dx + dy * dy;
        for (std::size_t s = 0; s < 3; ++s) {
          const double g = std::exp(-d2 / (2.0 * sigma[s] * sigma[s]));
          maps[s * kPixels + p] = std::max(maps[s * kPixels + p], g);
        }
      }
      if (box) {
        const double x0 = to_feature(box->x_min), x1 = to_feature(box->x_max);
        const double y0 = to_feature(box->y_min), y1 = to_feature(box->y_max);
        const double signed_dist = std::min({c - x0, x1 - c, r - y0, y1 - r});
        maps[3 * kPixels + p] = sigmoid(signed_dist / tau);
        const double hw = std::max((x1 - x0) / 2.0, 0.5);
        const double hh = std::max((y1 - y0) / 2.0, 0.5);
        const double u = (c - (x0 + x1) / 2.0) / hw;
        const double v = (r - (y0 + y1) / 2.0) / hh;
        maps[4 * kPixels + p] = std::exp(-(u * u + v * v));
      }
    }
  }
  for (std::size_t ch = 0; ch < static_cast<std::size_t>(kPromptChannels); ++ch) {
    for (int p = 0; p < kPixels; ++p) maps[ch * kPixels + static_cast<std::size_t>(p)] *= gain[ch];
  }
  return maps;
}

RealGrid StubModel::forward(const ImageEmbedding& embedding, const PromptSet& prompts,
                            std::unique_ptr<ForwardTape>* tape) const {
  if (prompts.empty()) throw std::invalid_argument("predict: empty prompt set (unprompted segmentation is not supported)");
  prompts.validate();
  if (embedding.channels != kEmbedChannels || embedding.rows != kF || embedding.cols != kF) {
    throw std::invalid_argument("forward: embedding does not match this model");
  }
  const auto& w1 = param(kHiddenW).values;
  const auto& b1 = param(kHiddenB).values;
  const auto& w2 = param(kOutW).values;
  const double b2 = param(kOutB).values[0];

  std::vector<const Box*> boxes;
  for (const auto& b : prompts.boxes) boxes.push_back(&b);
  if (boxes.empty()) boxes.push_back(nullptr);

  auto state = std::make_unique<StubTape>();
  state->embedding = &embedding;
  for (const Box* box : boxes) {
    GroupState g;
    g.prompt = prompt_features(prompts.points, box);
    g.pre.assign(static_cast<std::size_t>(kPixels) * kHidden, 0.0);
    std::vector<double> logits64(kPixels);
    std::array<double, kDecoderIn> x{};
    for (int p = 0; p < kPixels; ++p) {
      const auto up = static_cast<std::size_t>(p);
      for (std::size_t c = 0; c < static_cast<std::size_t>(kEmbedChannels); ++c) x[c] = embedding.values[c * kPixels + up];
      for (std::size_t c = 0; c < static_cast<std::size_t>(kPromptChannels); ++c) x[kEmbedChannels + c] = g.prompt[c * kPixels + up];
      double logit = b2;
      for (std::size_t j = 0; j < static_cast<std::size_t>(kHidden); ++j) {
        double z = b1[j];
        const double* row = &w1[j * kDecoderIn];
        for (std::size_t c = 0; c < static_cast<std::size_t>(kDecoderIn); ++c) z += row[c] * x[c];
        g.pre[up * kHidden + j] = z;
        if (z > 0) logit += w2[j] * z;
      }
      logits64[up] = logit;
    }
    g.logits = upsample(logits64);
    state->groups.push_back(std::move(g));
  }

  RealGrid probs(kSide, kSide);
  state->winner.assign(probs.size(), 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t gi = 1; gi < state->groups.size(); ++gi) {
      if (state->groups[gi].logits[i] > state->groups[best].logits[i]) best = gi;
    }
    state->winner[i] = static_cast<std::uint8_t>(best);
    probs[i] = sigmoid(state->groups[best].logits[i]);
  }
  if (tape) {
    state->probs = probs;
    *tape = std::move(state);
  }
  return probs;
}

void StubModel::backward(const ForwardTape& tape_base, const RealGrid& dloss_dprobs,
                         std::vector<std::vector<double>>& grads) const {
  const auto* tape = dynamic_cast<const StubTape*>(&tape_base);
  if (!tape) throw std::invalid_argument("backward: tape from a different model");
  require_same_shape(tape->probs, dloss_dprobs, "backward");
  if (grads.size() != 4) throw std::invalid_argument("backward: expected 4 gradient buffers");
  auto& g_w1 = grads[0];
  auto& g_b1 = grads[1];
  auto& g_w2 = grads[2];
  auto& g_b2 = grads[3];
  const auto& w2 = param(kOutW).values;
  const ImageEmbedding& emb = *tape->embedding;

  for (std::size_t gi = 0; gi < tape->groups.size(); ++gi) {
    const GroupState& g = tape->groups[gi];
    RealGrid dlogits(kSide, kSide, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < dlogits.size(); ++i) {
      if (tape->winner[i] != gi) continue;
      const double p = tape->probs[i];
      dlogits[i] = dloss_dprobs[i] * p * (1.0 - p);
      any = any || dlogits[i] != 0.0;
    }
    if (!any) continue;
    const std::vector<double> d64 = upsample_adjoint(dlogits);
    std::array<double, kDecoderIn> x{};
    for (int p = 0; p < kPixels; ++p) {
      const auto up = static_cast<std::size_t>(p);
      const double dl = d64[up];
      if (dl == 0.0) continue;
      g_b2[0] += dl;
      bool features_loaded = false;
      for (std::size_t j = 0; j < static_cast<std::size_t>(kHidden); ++j) {
        const double z = g.pre[up * kHidden + j];
        if (z <= 0) continue;
        g_w2[j] += dl * z;
        const double dz = dl * w2[j];
        if (!features_loaded) {
          for (std::size_t c = 0; c < static_cast<std::size_t>(kEmbedChannels); ++c) x[c] = emb.values[c * kPixels + up];
          for (std::size_t c = 0; c < static_cast<std::size_t>(kPromptChannels); ++c) x[kEmbedChannels + c] = g.prompt[c * kPixels + up];
          features_loaded = true;
        }
        g_b1[j] += dz;
        double* row = &g_w1[j * kDecoderIn];
        for (std::size_t c = 0; c < static_cast<std::size_t>(kDecoderIn); ++c) row[c] += dz * x[c];
      }
    }
  }
}

}  // namespace lungsam

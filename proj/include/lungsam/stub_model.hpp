#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "lungsam/model_adapter.hpp"

namespace lungsam {

/// Small promptable segmenter with the same three-part layout as the production
/// model: a frozen convolutional image encoder over a 64x64 grid, a frozen prompt
/// encoder producing dense point/box maps, and a trainable per-pixel MLP decoder
/// whose logits are bilinearly upsampled to 256x256.
class StubModel final : public SegModel {
 public:
  static constexpr int kFeatureSide = 64;
  static constexpr int kEmbedChannels = 16;
  static constexpr int kPromptChannels = 5;
  static constexpr int kHidden = 16;
  static constexpr const char* kArchitecture = "lungsam-stub-v1";

  /// Deterministic "pretrained" weights for the given seed.
  static std::unique_ptr<StubModel> create(std::uint64_t seed);
  /// Rebuilds a model from serialized parameters; validates names and shapes.
  static std::unique_ptr<StubModel> from_parameters(std::vector<Parameter> parameters);

  std::string architecture() const override { return kArchitecture; }
  int input_resolution() const override { return kSide; }
  std::unique_ptr<SegModel> clone() const override;

  std::vector<Parameter>& parameters() override { return params_; }
  const std::vector<Parameter>& parameters() const override { return params_; }

  ImageEmbedding encode(const ByteGrid& image) const override;
  RealGrid forward(const ImageEmbedding& embedding, const PromptSet& prompts,
                   std::unique_ptr<ForwardTape>* tape) const override;
  void backward(const ForwardTape& tape, const RealGrid& dloss_dprobs,
                std::vector<std::vector<double>>& grads) const override;

  /// Dense prompt maps (kPromptChannels x 64 x 64) for one decoding group.
  std::vector<double> prompt_features(std::span<const Point> points, const Box* box) const;

 private:
  explicit StubModel(std::vector<Parameter> parameters);
  const Parameter& param(std::size_t index) const { return params_[index]; }

  std::vector<Parameter> params_;
};

}  // namespace lungsam

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lungsam/data_ingest.hpp"
#include "lungsam/grid.hpp"
#include "lungsam/prompt_gen.hpp"

namespace lungsam {

namespace fs = std::filesystem;

enum class ModelComponent { image_encoder, prompt_encoder, mask_decoder };
enum class TrainableScope { decoder_only };

std::string_view to_string(ModelComponent component);
ModelComponent parse_component(std::string_view name);

struct Parameter {
  std::string name;
  ModelComponent component = ModelComponent::mask_decoder;
  std::vector<int> shape;
  std::vector<double> values;
};

struct ParameterCensus {
  std::size_t n_total = 0;
  std::size_t n_trainable = 0;
  friend bool operator==(const ParameterCensus&, const ParameterCensus&) = default;
};

/// Mutable view of one trainable tensor.
struct ParameterView {
  std::string_view name;
  std::span<double> values;
};

/// Per-pixel foreground probability at kSide x kSide.
struct SoftMask {
  RealGrid probs;
  std::string sample_id;
  PromptMode prompt_mode = PromptMode::points;
};

/// Output of the frozen image encoder; computed once per image and reusable across prompts.
struct ImageEmbedding {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // channel-major
};

/// State a forward pass leaves behind for the matching backward pass.
struct ForwardTape {
  virtual ~ForwardTape() = default;
};

/// A promptable segmentation network split into image encoder, prompt encoder and
/// mask decoder. Only mask-decoder parameters receive gradients.
class SegModel {
 public:
  virtual ~SegModel() = default;

  virtual std::string architecture() const = 0;
  virtual int input_resolution() const = 0;
  virtual std::unique_ptr<SegModel> clone() const = 0;

  virtual std::vector<Parameter>& parameters() = 0;
  virtual const std::vector<Parameter>& parameters() const = 0;

  virtual ImageEmbedding encode(const ByteGrid& image) const = 0;

  /// Probabilities for one prompt set. Multiple boxes are decoded separately and merged
  /// by pixelwise maximum. A non-null `tape` receives what backward() needs.
  virtual RealGrid forward(const ImageEmbedding& embedding, const PromptSet& prompts,
                           std::unique_ptr<ForwardTape>* tape = nullptr) const = 0;

  /// Adds d(loss)/d(decoder parameter) to `grads`, ordered like the model's
  /// mask-decoder parameters, given d(loss)/d(probs).
  virtual void backward(const ForwardTape& tape, const RealGrid& dloss_dprobs,
                        std::vector<std::vector<double>>& grads) const = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owning, copyable handle to a model; copies are deep.
class SegModelHandle {
 public:
  SegModelHandle(std::unique_ptr<SegModel> model, std::string checkpoint_id);
  SegModelHandle(const SegModelHandle& other);
  SegModelHandle& operator=(const SegModelHandle& other);
  SegModelHandle(SegModelHandle&&) noexcept = default;
  SegModelHandle& operator=(SegModelHandle&&) noexcept = default;

  const std::string& checkpoint_id() const { return checkpoint_id_; }
  int input_resolution() const { return model_->input_resolution(); }
  TrainableScope trainable_scope() const { return TrainableScope::decoder_only; }
  ParameterCensus census() const;

  SegModel& model() { return *model_; }
  const SegModel& model() const { return *model_; }

 private:
  std::unique_ptr<SegModel> model_;
  std::string checkpoint_id_;
};

/// Resolves `checkpoint_id`: "stub" or "stub:<seed>" builds the bundled test model;
/// anything else is a checkpoint path. An empty id falls back to $SEG_CHECKPOINT.
/// `expected_sha256`, when given, must match the checkpoint file.
SegModelHandle load_model(std::string_view checkpoint_id, std::string_view expected_sha256 = {});

void save_checkpoint(const SegModelHandle& handle, const fs::path& path, std::string_view metadata_json = "{}");

/// Exactly the mask decoder's parameters.
std::vector<ParameterView> trainable_parameters(SegModelHandle& handle);

SoftMask predict(const SegModelHandle& handle, const ImageSample& sample, const PromptSet& prompts);
SoftMask predict(const SegModelHandle& handle, const ImageEmbedding& embedding, const std::string& sample_id,
                 const PromptSet& prompts);

/// Text printed whenever no usable checkpoint is configured.
std::string checkpoint_instructions();

}  // namespace lungsam

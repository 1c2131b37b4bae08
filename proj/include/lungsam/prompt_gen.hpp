#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lungsam/data_ingest.hpp"
#include "lungsam/grid.hpp"

namespace lungsam {

enum class PromptMode { box, points, both };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);

/// Foreground point prompt in pixel coordinates of the 256x256 frame.
struct Point {
  int x = 0;
  int y = 0;
  int label = 1;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Inclusive pixel bounds; x_min < x_max and y_min < y_max.
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct PromptSet {
  std::vector<Point> points;
  std::vector<Box> boxes;
  PromptMode mode = PromptMode::points;

  bool empty() const { return points.empty() && boxes.empty(); }
  /// Throws std::invalid_argument on any broken PromptSet invariant.
  void validate(int side = kSide) const;
  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-pixel mean of training masks.
struct MeanImage {
  Dataset dataset = Dataset::montgomery;
  RealGrid pixel_mean;
  std::vector<std::string> source_ids;  // sorted
};

/// Averages the masks of the training-role samples only.
MeanImage compute_mean_image(std::span<const ImageSample> samples, const SplitRoles& roles);

/// Throws std::logic_error unless every source id of `mean` is a training-role id.
void audit_training_sources(const MeanImage& mean, const SplitRoles& roles);

/// Points derived from the mean image: threshold at `level`, keep the two largest
/// 8-connected components, and emit per component its centroid followed by the
/// centroids of the component eroded to k-1 evenly spaced depths.
PromptSet extract_points(const MeanImage& mean, int k_per_component, double level);

/// Tight per-lung boxes (two largest components), each coordinate perturbed by an
/// independent uniform offset in [-jitter, jitter] and clipped to the frame.
/// With `single_box` one box encloses all foreground.
PromptSet extract_box(const ByteGrid& mask, int jitter, std::uint64_t seed, bool single_box = false);

/// Points of `points` plus boxes of `boxes`, as a `both`-mode set.
PromptSet combine(const PromptSet& points, const PromptSet& boxes);

struct PromptOptions {
  PromptMode mode = PromptMode::points;
  double level = 0.5;
  int k_per_component = 3;
  int jitter = 20;       // training-role boxes
  int eval_jitter = 0;   // val/test boxes
  bool single_box = false;
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
};

using PromptTable = std::map<std::string, PromptSet>;

/// Prompts for every sample listed in `roles`. The mean image (and hence every
/// point prompt) is built from training-role samples only; boxes come from each
/// sample's own mask.
PromptTable build_prompts(std::span<const ImageSample> samples, const SplitRoles& roles, const PromptOptions& options,
                          MeanImage* mean_out = nullptr);

/// Text manifest, one line per sample: id, role, points=x,y,l;..., boxes=x0,y0,x1,y1;...
std::string prompts_to_text(const PromptTable& prompts, const SplitRoles& roles, const PromptOptions& options);
PromptTable prompts_from_text(std::string_view text);

}  // namespace lungsam

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lungsam/grid.hpp"

namespace lungsam {

namespace fs = std::filesystem;

enum class Dataset { montgomery, shenzhen };

std::string_view to_string(Dataset dataset);
Dataset parse_dataset(std::string_view name);

/// One preprocessed X-ray with its ground-truth lung mask.
struct ImageSample {
  std::string id;  // source filename stem
  Dataset dataset = Dataset::montgomery;
  ByteGrid image;  // kSide x kSide, [0,255]
  ByteGrid mask;   // kSide x kSide, {0,1}
  int original_height = 0;
  int original_width = 0;

  /// Throws std::invalid_argument if any ImageSample invariant is broken.
  void validate() const;
};

struct SampleIssue {
  std::string id;
  std::string reason;
};

/// Raised when one or more samples could not be loaded; lists every offender.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::vector<SampleIssue> issues);
  const std::vector<SampleIssue>& issues() const { return issues_; }

 private:
  std::vector<SampleIssue> issues_;
};

class DatasetNotFound : public DatasetError {
 public:
  explicit DatasetNotFound(const std::string& what) : DatasetError(what, {}) {}
};

struct LoadResult {
  std::vector<ImageSample> samples;  // sorted by id
  std::vector<SampleIssue> excluded;
};

/// Montgomery layout: <root>/CXR_png/<id>.png plus <root>/ManualMask/{leftMask,rightMask}/<id>.png.
/// A missing counterpart mask or unreadable file raises DatasetError naming every offending id.
LoadResult load_montgomery(const fs::path& root);

/// Shenzhen layout: <root>/CXR_png/<id>.png with masks in <root>/mask or <root>/masks named
/// <id>_mask.png or <id>.png. Images without a mask are excluded and reported.
LoadResult load_shenzhen(const fs::path& root);

LoadResult load_dataset(Dataset dataset, const fs::path& root);

// Preprocessing steps, exposed for testing.
ByteGrid binarize_source_mask(const ByteGrid& raw);  // > 127 -> 1
ByteGrid merge_masks(const ByteGrid& left, const ByteGrid& right);
ByteGrid resize_image(const ByteGrid& image, int side = kSide);  // bilinear
ByteGrid resize_mask(const ByteGrid& mask, int side = kSide);    // nearest, stays binary
ImageSample preprocess(std::string id, Dataset dataset, const ByteGrid& image, const ByteGrid& binary_mask);

/// Sample checksum: SHA-256 over the image bytes followed by the mask bytes.
std::string sample_checksum(const ImageSample& sample);

/// Cache layout: <dir>/manifest.tsv, <dir>/images/<id>.png, <dir>/masks/<id>.png (0/255).
void write_cache(std::span<const ImageSample> samples, const fs::path& dir);
std::vector<ImageSample> read_cache(const fs::path& dir);

// ---- splits ----

enum class Scheme { holdout_60_20_20, kfold_5 };
enum class Role { train, val, test };

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view name);
std::string_view to_string(Role role);
Role parse_role(std::string_view name);

inline constexpr int kFolds = 5;
inline constexpr std::uint64_t kDefaultSeed = 42;

/// Train/val/test role of every sample id, as consumed by training and prompt building.
struct SplitRoles {
  std::map<std::string, Role> role_of;

  std::vector<std::string> ids(Role role) const;  // sorted
  bool has(const std::string& id, Role role) const;
};

struct FoldPlan {
  Dataset dataset = Dataset::montgomery;
  Scheme scheme = Scheme::holdout_60_20_20;
  std::uint64_t seed = kDefaultSeed;
  std::map<std::string, int> assignment;  // holdout: static_cast<int>(Role); kfold: fold index

  std::size_t size() const { return assignment.size(); }
  std::vector<std::string> fold_ids(int fold) const;

  /// Holdout plans only.
  SplitRoles roles() const;
  /// K-fold plans only. Fold `test_fold` is the test set, the next fold (cyclically)
  /// validates, the remaining three train.
  SplitRoles roles_for_fold(int test_fold) const;
};

FoldPlan make_fold_plan(std::span<const ImageSample> samples, Scheme scheme, std::uint64_t seed);
FoldPlan make_fold_plan(Dataset dataset, std::vector<std::string> ids, Scheme scheme, std::uint64_t seed);

std::string plan_to_json(const FoldPlan& plan, const std::optional<fs::path>& cache_dir = std::nullopt);
FoldPlan plan_from_json(std::string_view text, std::optional<fs::path>* cache_dir = nullptr);

/// Samples whose id has the given role, in id order.
std::vector<ImageSample> select(std::span<const ImageSample> samples, const SplitRoles& roles, Role role);
std::vector<ImageSample> select(std::span<const ImageSample> samples, const std::vector<std::string>& ids);

}  // namespace lungsam

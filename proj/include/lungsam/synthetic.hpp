#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lungsam/data_ingest.hpp"

namespace lungsam {

namespace fs = std::filesystem;

/// A chest-radiograph-like image: bright torso, two darker elliptical lung fields,
/// rib texture and noise. Masks are 0/255; `left_mask | right_mask` is the full mask.
struct SyntheticRadiograph {
  ByteGrid image;
  ByteGrid left_mask;
  ByteGrid right_mask;
};

SyntheticRadiograph make_synthetic_radiograph(int height, int width, std::uint64_t seed);

/// Preprocessed synthetic sample, as the loaders would produce it.
ImageSample make_synthetic_sample(Dataset dataset, const std::string& id, std::uint64_t seed, int height = 320, int width = 300);

/// Writes `count` synthetic cases in the published directory layout of `dataset`
/// (Montgomery: CXR_png + ManualMask/{leftMask,rightMask}; Shenzhen: CXR_png + mask/<id>_mask.png).
void write_synthetic_dataset(Dataset dataset, int count, std::uint64_t seed, const fs::path& root, int height = 320, int width = 300);

}  // namespace lungsam

#include "lungsam/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lungsam/io.hpp"
#include "lungsam/rng.hpp"

namespace lungsam {

namespace {

struct Ellipse {
  double cx, cy, rx, ry, angle;

  bool contains(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = ((x - cx) * c + (y - cy) * s) / rx;
    const double v = (-(x - cx) * s + (y - cy) * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

SyntheticRadiograph make_synthetic_radiograph(int height, int width, std::uint64_t seed) {
  SeededRng rng(seed);
  const double w = width, h = height;
  const double shift_x = rng.uniform(-0.03, 0.03) * w;
  const double shift_y = rng.uniform(-0.03, 0.03) * h;
  const Ellipse torso{w * 0.5 + shift_x, h * 0.55 + shift_y, w * 0.46, h * 0.52, 0.0};
  const double lung_rx = w * rng.uniform(0.13, 0.17);
  const double lung_ry = h * rng.uniform(0.26, 0.32);
  const double gap = w * rng.uniform(0.19, 0.23);
  const double lung_cy = h * rng.uniform(0.45, 0.52) + shift_y;
  // Image-left ellipse is the patient's right lung.
  const Ellipse right_lung{w * 0.5 - gap + shift_x, lung_cy, lung_rx, lung_ry, rng.uniform(-0.15, 0.0)};
  const Ellipse left_lung{w * 0.5 + gap + shift_x, lung_cy + rng.uniform(-0.02, 0.02) * h, lung_rx * rng.uniform(0.9, 1.0),
                          lung_ry * rng.uniform(0.95, 1.05), rng.uniform(0.0, 0.15)};
  const double body_level = rng.uniform(150, 185);
  const double lung_level = rng.uniform(45, 75);
  const double rib_phase = rng.uniform(0, 6.283);
  const double rib_period = h * rng.uniform(0.07, 0.09);

  SyntheticRadiograph out{ByteGrid(height, width), ByteGrid(height, width), ByteGrid(height, width)};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      double v = torso.contains(x, y) ? body_level : 25.0;
      const bool in_left = left_lung.contains(x, y);
      const bool in_right = right_lung.contains(x, y);
      if (in_left || in_right) {
        v = lung_level + 18.0 * std::max(0.0, std::sin(2 * 3.14159265 * y / rib_period + rib_phase + 0.02 * x));
      }
      v += 10.0 * rng.normal();
      out.image(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      out.left_mask(r, c) = in_left ? 255 : 0;
      out.right_mask(r, c) = in_right ? 255 : 0;
    }
  }
  return out;
}

ImageSample make_synthetic_sample(Dataset dataset, const std::string& id, std::uint64_t seed, int height, int width) {
  const auto x = make_synthetic_radiograph(height, width, seed);
  return preprocess(id, dataset, x.image, merge_masks(binarize_source_mask(x.left_mask), binarize_source_mask(x.right_mask)));
}

void write_synthetic_dataset(Dataset dataset, int count, std::uint64_t seed, const fs::path& root, int height, int width) {
  if (count < 1) throw std::invalid_argument("write_synthetic_dataset: count must be >= 1");
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), dataset == Dataset::montgomery ? "MCUCXR_%04d_0" : "CHNCXR_%04d_0", i + 1);
    // Vary the source resolution a little so resizing is exercised.
    const int hh = height + 8 * (i % 3);
    const int ww = width + 6 * (i % 4);
    const auto x = make_synthetic_radiograph(hh, ww, mix_seed(seed, static_cast<std::uint64_t>(i)));
    write_gray_png(root / "CXR_png" / (std::string(id) + ".png"), x.image);
    if (dataset == Dataset::montgomery) {
      write_gray_png(root / "ManualMask" / "leftMask" / (std::string(id) + ".png"), x.left_mask);
      write_gray_png(root / "ManualMask" / "rightMask" / (std::string(id) + ".png"), x.right_mask);
    } else {
      ByteGrid mask(hh, ww);
      for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = (x.left_mask[p] | x.right_mask[p]) ? 255 : 0;
      write_gray_png(root / "mask" / (std::string(id) + "_mask.png"), mask);
    }
  }
}

}  // namespace lungsam

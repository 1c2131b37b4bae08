#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>
#include <unistd.h>

#include "lungsam/data_ingest.hpp"
#include "lungsam/rng.hpp"
#include "lungsam/synthetic.hpp"

namespace lungsam::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("lungsam_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<ImageSample> synthetic_samples(int n, std::uint64_t seed = 1, Dataset dataset = Dataset::montgomery) {
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "S%03d", i);
    out.push_back(make_synthetic_sample(dataset, id, mix_seed(seed, static_cast<std::uint64_t>(i)), 256, 256));
  }
  return out;
}

inline ByteGrid random_mask(SeededRng& rng, int rows, int cols, double p) {
  ByteGrid m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform01() < p ? 1 : 0;
  return m;
}

inline ByteGrid rect_mask(int rows, int cols, int r0, int c0, int r1, int c1) {
  ByteGrid m(rows, cols);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) m(r, c) = 1;
  }
  return m;
}

}  // namespace lungsam::testing

#include "lungsam/data_ingest.hpp"

#include <algorithm>
#include <array>
#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "lungsam/io.hpp"
#include "lungsam/rng.hpp"

namespace lungsam {

std::string_view to_string(Dataset dataset) {
  switch (dataset) {
    case Dataset::montgomery: return "montgomery";
    case Dataset::shenzhen: return "shenzhen";
  }
  return "unknown";
}

Dataset parse_dataset(std::string_view name) {
  if (name == "montgomery") return Dataset::montgomery;
  if (name == "shenzhen") return Dataset::shenzhen;
  throw std::invalid_argument("unknown dataset '" + std::string(name) + "' (expected montgomery|shenzhen)");
}

void ImageSample::validate() const {
  if (image.rows() != kSide || image.cols() != kSide) throw std::invalid_argument(id + ": image is not 256x256");
  if (!image.same_shape(mask)) throw std::invalid_argument(id + ": image and mask shapes differ");
  for (auto v : mask.values()) {
    if (v > 1) throw std::invalid_argument(id + ": mask is not binary");
  }
}

namespace {

std::string describe(const std::vector<SampleIssue>& issues) {
  std::ostringstream out;
  std::size_t shown = 0;
  for (const auto& issue : issues) {
    if (shown++ == 10) {
      out << "\n  ... and " << issues.size() - 10 << " more";
      break;
    }
    out << "\n  " << issue.id << ": " << issue.reason;
  }
  return out.str();
}

constexpr std::array<std::string_view, 6> kImageExtensions = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

bool is_image_file(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end();
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Finds <dir>/<stem><suffix>.<any image ext>.
std::optional<fs::path> find_image(const fs::path& dir, const std::string& stem, std::string_view suffix = "") {
  for (auto ext : kImageExtensions) {
    fs::path candidate = dir / (stem + std::string(suffix) + std::string(ext));
    if (fs::is_regular_file(candidate)) return candidate;
  }
  return std::nullopt;
}

fs::path resolve_root(const fs::path& root, std::string_view nested) {
  if (fs::is_directory(root / "CXR_png")) return root;
  if (fs::is_directory(root / nested / "CXR_png")) return root / nested;
  return root;
}

std::vector<fs::path> require_images(const fs::path& root, std::string_view dataset) {
  if (!fs::is_directory(root)) throw DatasetNotFound(std::string(dataset) + " dataset not found: " + root.string() + " is not a directory");
  auto images = list_images(root / "CXR_png");
  if (images.empty()) {
    throw DatasetNotFound(std::string(dataset) + " dataset not found: no images under " + (root / "CXR_png").string());
  }
  return images;
}

}  // namespace

DatasetError::DatasetError(const std::string& what, std::vector<SampleIssue> issues)
    : std::runtime_error(what + describe(issues)), issues_(std::move(issues)) {}

ByteGrid binarize_source_mask(const ByteGrid& raw) {
  ByteGrid out(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] > 127 ? 1 : 0;
  return out;
}

ByteGrid merge_masks(const ByteGrid& left, const ByteGrid& right) {
  require_same_shape(left, right, "merge_masks");
  ByteGrid out(left.rows(), left.cols());
  for (std::size_t i = 0; i < left.size(); ++i) out[i] = (left[i] | right[i]) ? 1 : 0;
  return out;
}

namespace {

ByteGrid resize_with(const ByteGrid& src, int side, int interpolation) {
  if (src.empty()) throw std::invalid_argument("resize: empty input");
  cv::Mat view(src.rows(), src.cols(), CV_8UC1, const_cast<std::uint8_t*>(src.data()));
  cv::Mat dst;
  cv::resize(view, dst, cv::Size(side, side), 0, 0, interpolation);
  ByteGrid out(side, side);
  for (int r = 0; r < side; ++r) std::copy_n(dst.ptr<std::uint8_t>(r), side, &out(r, 0));
  return out;
}

}  // namespace

ByteGrid resize_image(const ByteGrid& image, int side) { return resize_with(image, side, cv::INTER_LINEAR); }

ByteGrid resize_mask(const ByteGrid& mask, int side) {
  ByteGrid out = resize_with(mask, side, cv::INTER_NEAREST);
  for (auto& v : out.values()) v = v ? 1 : 0;
  return out;
}

ImageSample preprocess(std::string id, Dataset dataset, const ByteGrid& image, const ByteGrid& binary_mask) {
  require_same_shape(image, binary_mask, id.c_str());
  ImageSample sample;
  sample.id = std::move(id);
  sample.dataset = dataset;
  sample.original_height = image.rows();
  sample.original_width = image.cols();
  sample.image = resize_image(image);
  sample.mask = resize_mask(binary_mask);
  return sample;
}

LoadResult load_montgomery(const fs::path& root_in) {
  const fs::path root = resolve_root(root_in, "MontgomerySet");
  const auto images = require_images(root, "montgomery");
  const fs::path left_dir = root / "ManualMask" / "leftMask";
  const fs::path right_dir = root / "ManualMask" / "rightMask";

  LoadResult result;
  std::vector<SampleIssue> issues;
  for (const auto& image_path : images) {
    const std::string id = image_path.stem().string();
    auto left = find_image(left_dir, id);
    auto right = find_image(right_dir, id);
    if (!left || !right) {
      issues.push_back({id, std::string("missing ") + (!left ? "left" : "right") + " lung mask"});
      continue;
    }
    try {
      const ByteGrid image = read_gray_image(image_path);
      const ByteGrid merged = merge_masks(binarize_source_mask(read_gray_image(*left)),
                                          binarize_source_mask(read_gray_image(*right)));
      result.samples.push_back(preprocess(id, Dataset::montgomery, image, merged));
    } catch (const std::exception& e) {
      issues.push_back({id, e.what()});
    }
  }
  if (!issues.empty()) throw DatasetError("montgomery: " + std::to_string(issues.size()) + " sample(s) failed to load", std::move(issues));
  return result;
}

LoadResult load_shenzhen(const fs::path& root_in) {
  const fs::path root = resolve_root(root_in, "ChinaSet_AllFiles");
  const auto images = require_images(root, "shenzhen");
  std::vector<fs::path> mask_dirs;
  for (const char* name : {"mask", "masks", "Mask", "ManualMask"}) {
    if (fs::is_directory(root / name)) mask_dirs.push_back(root / name);
  }

  LoadResult result;
  std::vector<SampleIssue> issues;
  for (const auto& image_path : images) {
    const std::string id = image_path.stem().string();
    std::optional<fs::path> mask_path;
    for (const auto& dir : mask_dirs) {
      mask_path = find_image(dir, id, "_mask");
      if (!mask_path) mask_path = find_image(dir, id);
      if (mask_path) break;
    }
    if (!mask_path) {
      result.excluded.push_back({id, "no mask file"});
      continue;
    }
    try {
      const ByteGrid image = read_gray_image(image_path);
      const ByteGrid mask = binarize_source_mask(read_gray_image(*mask_path));
      result.samples.push_back(preprocess(id, Dataset::shenzhen, image, mask));
    } catch (const std::exception& e) {
      issues.push_back({id, e.what()});
    }
  }
  if (!issues.empty()) throw DatasetError("shenzhen: " + std::to_string(issues.size()) + " sample(s) failed to load", std::move(issues));
  if (result.samples.empty()) throw DatasetNotFound("shenzhen dataset not found: no image has a matching mask under " + root.string());
  return result;
}

LoadResult load_dataset(Dataset dataset, const fs::path& root) {
  return dataset == Dataset::montgomery ? load_montgomery(root) : load_shenzhen(root);
}

std::string sample_checksum(const ImageSample& sample) {
  std::vector<unsigned char> bytes(sample.image.values().begin(), sample.image.values().end());
  bytes.insert(bytes.end(), sample.mask.values().begin(), sample.mask.values().end());
  return sha256_hex(bytes);
}

void write_cache(std::span<const ImageSample> samples, const fs::path& dir) {
  if (samples.empty()) throw std::invalid_argument("write_cache: no samples");
  std::ostringstream manifest;
  manifest << "# lungsam cache v1 dataset=" << to_string(samples.front().dataset) << " count=" << samples.size() << "\n";
  manifest << "# id\tsha256\toriginal_height\toriginal_width\n";
  for (const auto& sample : samples) {
    sample.validate();
    write_gray_png(dir / "images" / (sample.id + ".png"), sample.image);
    ByteGrid visible = sample.mask;
    for (auto& v : visible.values()) v = v ? 255 : 0;
    write_gray_png(dir / "masks" / (sample.id + ".png"), visible);
    manifest << sample.id << '\t' << sample_checksum(sample) << '\t' << sample.original_height << '\t' << sample.original_width << '\n';
  }
  write_text(dir / "manifest.tsv", manifest.str());
}

std::vector<ImageSample> read_cache(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.tsv";
  if (!fs::is_regular_file(manifest_path)) throw DatasetNotFound("no cache manifest at " + manifest_path.string());
  std::istringstream manifest(read_text(manifest_path));
  std::string line;
  std::optional<Dataset> dataset;
  std::vector<ImageSample> samples;
  std::vector<SampleIssue> issues;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto pos = line.find("dataset=");
      if (pos != std::string::npos) {
        auto end = line.find(' ', pos);
        dataset = parse_dataset(line.substr(pos + 8, end == std::string::npos ? std::string::npos : end - pos - 8));
      }
      continue;
    }
    auto fields = split(line, '\t');
    if (fields.size() != 4 || !dataset) throw std::runtime_error("malformed cache manifest line: " + line);
    ImageSample sample;
    sample.id = fields[0];
    sample.dataset = *dataset;
    sample.original_height = std::stoi(fields[2]);
    sample.original_width = std::stoi(fields[3]);
    try {
      sample.image = read_gray_image(dir / "images" / (sample.id + ".png"));
      sample.mask = binarize_source_mask(read_gray_image(dir / "masks" / (sample.id + ".png")));
      sample.validate();
    } catch (const std::exception& e) {
      issues.push_back({sample.id, e.what()});
      continue;
    }
    if (sample_checksum(sample) != fields[1]) {
      issues.push_back({sample.id, "checksum mismatch"});
      continue;
    }
    samples.push_back(std::move(sample));
  }
  if (!issues.empty()) throw DatasetError("cache " + dir.string() + " is damaged", std::move(issues));
  if (samples.empty()) throw DatasetNotFound("cache " + dir.string() + " lists no samples");
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return samples;
}

// ---- splits ----

std::string_view to_string(Scheme scheme) {
  return scheme == Scheme::holdout_60_20_20 ? "holdout_60_20_20" : "kfold_5";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "holdout_60_20_20" || name == "holdout") return Scheme::holdout_60_20_20;
  if (name == "kfold_5" || name == "kfold5") return Scheme::kfold_5;
  throw std::invalid_argument("unknown fold scheme '" + std::string(name) + "' (expected holdout_60_20_20|kfold_5)");
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::train: return "train";
    case Role::val: return "val";
    case Role::test: return "test";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  if (name == "train") return Role::train;
  if (name == "val") return Role::val;
  if (name == "test") return Role::test;
  throw std::invalid_argument("unknown role '" + std::string(name) + "'");
}

std::vector<std::string> SplitRoles::ids(Role role) const {
  std::vector<std::string> out;
  for (const auto& [id, r] : role_of) {
    if (r == role) out.push_back(id);
  }
  return out;
}

bool SplitRoles::has(const std::string& id, Role role) const {
  auto it = role_of.find(id);
  return it != role_of.end() && it->second == role;
}

std::vector<std::string> FoldPlan::fold_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

SplitRoles FoldPlan::roles() const {
  if (scheme != Scheme::holdout_60_20_20) throw std::logic_error("roles() requires a holdout plan; use roles_for_fold()");
  SplitRoles out;
  for (const auto& [id, r] : assignment) out.role_of.emplace(id, static_cast<Role>(r));
  return out;
}

SplitRoles FoldPlan::roles_for_fold(int test_fold) const {
  if (scheme != Scheme::kfold_5) throw std::logic_error("roles_for_fold() requires a k-fold plan");
  if (test_fold < 0 || test_fold >= kFolds) throw std::out_of_range("fold index out of range");
  const int val_fold = (test_fold + 1) % kFolds;
  SplitRoles out;
  for (const auto& [id, f] : assignment) {
    out.role_of.emplace(id, f == test_fold ? Role::test : f == val_fold ? Role::val : Role::train);
  }
  return out;
}

FoldPlan make_fold_plan(std::span<const ImageSample> samples, Scheme scheme, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("make_fold_plan: no samples");
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  return make_fold_plan(samples.front().dataset, std::move(ids), scheme, seed);
}

FoldPlan make_fold_plan(Dataset dataset, std::vector<std::string> ids, Scheme scheme, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("make_fold_plan: duplicate sample id");
  const std::size_t n = ids.size();
  const std::size_t minimum = scheme == Scheme::kfold_5 ? kFolds : 3;
  if (n < minimum) {
    throw std::invalid_argument("make_fold_plan: " + std::string(to_string(scheme)) + " needs at least " + std::to_string(minimum) +
                                " samples, got " + std::to_string(n));
  }
  SeededRng rng(seed);
  rng.shuffle(ids);

  FoldPlan plan;
  plan.dataset = dataset;
  plan.scheme = scheme;
  plan.seed = seed;
  if (scheme == Scheme::holdout_60_20_20) {
    const std::size_t n_test = n / 5;  // floor(0.2 N)
    const std::size_t n_val = n / 5;
    for (std::size_t i = 0; i < n; ++i) {
      const Role role = i < n_test ? Role::test : i < n_test + n_val ? Role::val : Role::train;
      plan.assignment.emplace(ids[i], static_cast<int>(role));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) plan.assignment.emplace(ids[i], static_cast<int>(i % kFolds));
  }
  return plan;
}

std::string plan_to_json(const FoldPlan& plan, const std::optional<fs::path>& cache_dir) {
  nlohmann::ordered_json j;
  j["dataset"] = to_string(plan.dataset);
  j["scheme"] = to_string(plan.scheme);
  j["seed"] = plan.seed;
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  auto& assignment = j["assignment"];
  assignment = nlohmann::ordered_json::object();
  for (const auto& [id, value] : plan.assignment) {
    if (plan.scheme == Scheme::holdout_60_20_20) {
      assignment[id] = to_string(static_cast<Role>(value));
    } else {
      assignment[id] = value;
    }
  }
  return j.dump(2) + "\n";
}

FoldPlan plan_from_json(std::string_view text, std::optional<fs::path>* cache_dir) {
  const auto j = nlohmann::json::parse(text);
  FoldPlan plan;
  plan.dataset = parse_dataset(j.at("dataset").get<std::string>());
  plan.scheme = parse_scheme(j.at("scheme").get<std::string>());
  plan.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& [id, value] : j.at("assignment").items()) {
    int v = 0;
    if (plan.scheme == Scheme::holdout_60_20_20) {
      v = static_cast<int>(parse_role(value.get<std::string>()));
    } else {
      v = value.get<int>();
      if (v < 0 || v >= kFolds) throw std::invalid_argument("plan: fold index out of range for " + id);
    }
    plan.assignment.emplace(id, v);
  }
  if (cache_dir) {
    *cache_dir = j.contains("cache_dir") ? std::optional<fs::path>(j["cache_dir"].get<std::string>()) : std::nullopt;
  }
  return plan;
}

std::vector<ImageSample> select(std::span<const ImageSample> samples, const SplitRoles& roles, Role role) {
  std::vector<ImageSample> out;
  for (const auto& s : samples) {
    if (roles.has(s.id, role)) out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<ImageSample> select(std::span<const ImageSample> samples, const std::vector<std::string>& ids_in) {
  std::vector<std::string> ids = ids_in;
  std::sort(ids.begin(), ids.end());
  std::vector<ImageSample> out;
  for (const auto& s : samples) {
    if (std::binary_search(ids.begin(), ids.end(), s.id)) out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace lungsam

#include "lungsam/prompt_gen.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "lungsam/io.hpp"
#include "lungsam/rng.hpp"

namespace lungsam {

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::box: return "box";
    case PromptMode::points: return "points";
    case PromptMode::both: return "both";
  }
  return "unknown";
}

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "box") return PromptMode::box;
  if (name == "points") return PromptMode::points;
  if (name == "both") return PromptMode::both;
  throw std::invalid_argument("unknown prompt mode '" + std::string(name) + "' (expected box|points|both)");
}

void PromptSet::validate(int side) const {
  auto in_frame = [side](int v) { return v >= 0 && v < side; };
  for (const auto& p : points) {
    if (!in_frame(p.x) || !in_frame(p.y)) throw std::invalid_argument("prompt point outside the frame");
    if (p.label != 1) throw std::invalid_argument("only foreground point labels are supported");
  }
  for (const auto& b : boxes) {
    if (!in_frame(b.x_min) || !in_frame(b.y_min) || !in_frame(b.x_max) || !in_frame(b.y_max)) {
      throw std::invalid_argument("prompt box outside the frame");
    }
    if (b.x_min >= b.x_max || b.y_min >= b.y_max) throw std::invalid_argument("degenerate prompt box");
  }
  if (mode == PromptMode::points && !boxes.empty()) throw std::invalid_argument("points-mode prompt carries boxes");
  if (mode == PromptMode::box && !points.empty()) throw std::invalid_argument("box-mode prompt carries points");
}

MeanImage compute_mean_image(std::span<const ImageSample> samples, const SplitRoles& roles) {
  const auto training = select(samples, roles, Role::train);
  if (training.empty()) throw PromptError("compute_mean_image: no training-role samples");
  MeanImage mean;
  mean.dataset = training.front().dataset;
  const int rows = training.front().mask.rows();
  const int cols = training.front().mask.cols();
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(rows) * cols, 0);
  for (const auto& s : training) {
    if (s.mask.rows() != rows || s.mask.cols() != cols) throw std::invalid_argument("compute_mean_image: mask shapes differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += s.mask[i];
    mean.source_ids.push_back(s.id);
  }
  mean.pixel_mean = RealGrid(rows, cols);
  const double n = static_cast<double>(training.size());
  for (std::size_t i = 0; i < counts.size(); ++i) mean.pixel_mean[i] = counts[i] / n;
  return mean;
}

void audit_training_sources(const MeanImage& mean, const SplitRoles& roles) {
  for (const auto& id : mean.source_ids) {
    if (!roles.has(id, Role::train)) {
      throw std::logic_error("prompt audit: mean image used non-training sample '" + id + "'");
    }
  }
}

namespace {

struct Component {
  int label = 0;
  int area = 0;
  int left = 0, top = 0, width = 0, height = 0;
  double cx = 0.0, cy = 0.0;
};

cv::Mat to_mat(const ByteGrid& binary) {
  cv::Mat m(binary.rows(), binary.cols(), CV_8UC1);
  for (int r = 0; r < binary.rows(); ++r) {
    for (int c = 0; c < binary.cols(); ++c) m.at<std::uint8_t>(r, c) = binary(r, c) ? 255 : 0;
  }
  return m;
}

// Components sorted by area (descending), ties by label, i.e. raster order of first pixel.
std::vector<Component> components(const cv::Mat& binary, cv::Mat& labels) {
  cv::Mat stats, centroids;
  const int n = cv::connectedComponentsWithStats(binary, labels, stats, centroids, 8, CV_32S);
  std::vector<Component> out;
  for (int label = 1; label < n; ++label) {
    Component c;
    c.label = label;
    c.area = stats.at<int>(label, cv::CC_STAT_AREA);
    c.left = stats.at<int>(label, cv::CC_STAT_LEFT);
    c.top = stats.at<int>(label, cv::CC_STAT_TOP);
    c.width = stats.at<int>(label, cv::CC_STAT_WIDTH);
    c.height = stats.at<int>(label, cv::CC_STAT_HEIGHT);
    c.cx = centroids.at<double>(label, 0);
    c.cy = centroids.at<double>(label, 1);
    out.push_back(c);
  }
  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
  return out;
}

std::vector<Component> two_largest_left_to_right(std::vector<Component> comps) {
  if (comps.size() > 2) comps.resize(2);
  std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.cx < b.cx; });
  return comps;
}

// Rounded centroid of the nonzero pixels of `region`; nullopt when empty.
std::optional<cv::Point> centroid(const cv::Mat& region) {
  const cv::Moments m = cv::moments(region, true);
  if (m.m00 <= 0.0) return std::nullopt;
  return cv::Point(static_cast<int>(std::lround(m.m10 / m.m00)), static_cast<int>(std::lround(m.m01 / m.m00)));
}

// Pixel of `region` farthest from the background (Euclidean), first in raster order on ties.
cv::Point deepest_point(const cv::Mat& region) {
  cv::Mat padded;
  cv::copyMakeBorder(region, padded, 1, 1, 1, 1, cv::BORDER_CONSTANT, 0);
  cv::Mat dist;
  cv::distanceTransform(padded, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  float best = -1.0f;
  cv::Point where(0, 0);
  for (int r = 0; r < region.rows; ++r) {
    for (int c = 0; c < region.cols; ++c) {
      const float d = dist.at<float>(r + 1, c + 1);
      if (d > best) {
        best = d;
        where = cv::Point(c, r);
      }
    }
  }
  return where;
}

// Interior point of `region` (a subset of `component`): its centroid when that lies in
// the component, otherwise the component's deepest pixel.
cv::Point interior_point(const cv::Mat& region, const cv::Mat& component) {
  auto c = centroid(region);
  if (c && component.at<std::uint8_t>(c->y, c->x)) return *c;
  return deepest_point(component);
}

}  // namespace

PromptSet extract_points(const MeanImage& mean, int k_per_component, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("extract_points: level must lie in (0,1)");
  if (k_per_component < 1) throw std::invalid_argument("extract_points: k_per_component must be >= 1");
  const RealGrid& pm = mean.pixel_mean;
  ByteGrid above(pm.rows(), pm.cols());
  for (std::size_t i = 0; i < pm.size(); ++i) above[i] = pm[i] >= level ? 1 : 0;

  cv::Mat labels;
  auto comps = components(to_mat(above), labels);
  if (comps.size() < 2) {
    throw PromptError("extract_points: found " + std::to_string(comps.size()) + " component(s) at level " + format_real(level) +
                      "; two lungs are needed, try a lower level");
  }
  comps = two_largest_left_to_right(std::move(comps));

  const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(3, 3));
  PromptSet out;
  out.mode = PromptMode::points;
  for (const auto& comp : comps) {
    cv::Mat region = labels == comp.label;  // 255 inside
    const cv::Point center = interior_point(region, region);
    out.points.push_back({center.x, center.y, 1});
    if (k_per_component == 1) continue;

    // Erode until empty; layers[d] is the region after d erosions.
    std::vector<cv::Mat> layers{region};
    while (true) {
      cv::Mat next;
      cv::erode(layers.back(), next, kernel, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
      if (cv::countNonZero(next) == 0) break;
      layers.push_back(next);
    }
    const int max_depth = static_cast<int>(layers.size()) - 1;
    for (int j = 1; j < k_per_component; ++j) {
      const int depth = static_cast<int>(std::lround(static_cast<double>(j) * max_depth / k_per_component));
      const cv::Point p = interior_point(layers[static_cast<std::size_t>(depth)], region);
      out.points.push_back({p.x, p.y, 1});
    }
  }
  return out;
}

namespace {

Box tight_box(int left, int top, int width, int height, int cols, int rows) {
  Box b{left, top, left + width - 1, top + height - 1};
  // One-pixel-wide extents are widened by one pixel to keep the box non-degenerate.
  if (b.x_min == b.x_max) {
    if (b.x_max < cols - 1) ++b.x_max; else --b.x_min;
  }
  if (b.y_min == b.y_max) {
    if (b.y_max < rows - 1) ++b.y_max; else --b.y_min;
  }
  return b;
}

void jitter_axis(int& lo, int& hi, int jitter, int limit, SeededRng& rng) {
  const int lo0 = lo;
  const int hi0 = hi;
  do {
    lo = std::clamp(lo0 + static_cast<int>(rng.uniform_int(-jitter, jitter)), 0, limit - 1);
    hi = std::clamp(hi0 + static_cast<int>(rng.uniform_int(-jitter, jitter)), 0, limit - 1);
  } while (lo >= hi);
}

}  // namespace

PromptSet extract_box(const ByteGrid& mask, int jitter, std::uint64_t seed, bool single_box) {
  if (jitter < 0) throw std::invalid_argument("extract_box: jitter must be >= 0");
  if (mask.rows() < 2 || mask.cols() < 2) throw std::invalid_argument("extract_box: mask too small");
  cv::Mat labels;
  const cv::Mat binary = to_mat(mask);
  auto comps = components(binary, labels);
  if (comps.empty()) throw PromptError("extract_box: mask has no foreground");

  std::vector<Box> boxes;
  if (single_box) {
    const cv::Rect r = cv::boundingRect(binary);
    boxes.push_back(tight_box(r.x, r.y, r.width, r.height, mask.cols(), mask.rows()));
  } else {
    if (comps.size() == 1) log_warning("extract_box: single foreground component, emitting one box");
    for (const auto& c : two_largest_left_to_right(std::move(comps))) {
      boxes.push_back(tight_box(c.left, c.top, c.width, c.height, mask.cols(), mask.rows()));
    }
  }

  PromptSet out;
  out.mode = PromptMode::box;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Box b = boxes[i];
    if (jitter > 0) {
      SeededRng rng(mix_seed(seed, i));
      jitter_axis(b.x_min, b.x_max, jitter, mask.cols(), rng);
      jitter_axis(b.y_min, b.y_max, jitter, mask.rows(), rng);
    }
    out.boxes.push_back(b);
  }
  return out;
}

PromptSet combine(const PromptSet& points, const PromptSet& boxes) {
  PromptSet out;
  out.mode = PromptMode::both;
  out.points = points.points;
  out.boxes = boxes.boxes;
  return out;
}

void PromptOptions::validate() const {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("prompt level must lie in (0,1)");
  if (k_per_component < 1) throw std::invalid_argument("prompt k must be >= 1");
  if (jitter < 0 || eval_jitter < 0) throw std::invalid_argument("prompt jitter must be >= 0");
}

PromptTable build_prompts(std::span<const ImageSample> samples, const SplitRoles& roles, const PromptOptions& options,
                          MeanImage* mean_out) {
  options.validate();
  PromptTable table;
  PromptSet points;
  if (options.mode != PromptMode::box) {
    MeanImage mean = compute_mean_image(samples, roles);
    audit_training_sources(mean, roles);
    points = extract_points(mean, options.k_per_component, options.level);
    if (mean_out) *mean_out = std::move(mean);
  }
  for (const auto& sample : samples) {
    auto role_it = roles.role_of.find(sample.id);
    if (role_it == roles.role_of.end()) continue;
    if (options.mode == PromptMode::points) {
      table.emplace(sample.id, points);
      continue;
    }
    const int jitter = role_it->second == Role::train ? options.jitter : options.eval_jitter;
    PromptSet boxes = extract_box(sample.mask, jitter, mix_seed(options.seed, stable_hash(sample.id)), options.single_box);
    table.emplace(sample.id, options.mode == PromptMode::both ? combine(points, boxes) : std::move(boxes));
  }
  return table;
}

std::string prompts_to_text(const PromptTable& prompts, const SplitRoles& roles, const PromptOptions& options) {
  std::ostringstream out;
  out << "# lungsam prompts v1 mode=" << to_string(options.mode) << " level=" << format_real(options.level)
      << " k=" << options.k_per_component << " jitter=" << options.jitter << " eval_jitter=" << options.eval_jitter
      << " single_box=" << (options.single_box ? 1 : 0) << " seed=" << options.seed << "\n";
  for (const auto& [id, set] : prompts) {
    auto role = roles.role_of.find(id);
    out << id << '\t' << (role == roles.role_of.end() ? "unassigned" : to_string(role->second)) << '\t' << to_string(set.mode)
        << "\tpoints=";
    for (std::size_t i = 0; i < set.points.size(); ++i) {
      out << (i ? ";" : "") << set.points[i].x << ',' << set.points[i].y << ',' << set.points[i].label;
    }
    out << "\tboxes=";
    for (std::size_t i = 0; i < set.boxes.size(); ++i) {
      const Box& b = set.boxes[i];
      out << (i ? ";" : "") << b.x_min << ',' << b.y_min << ',' << b.x_max << ',' << b.y_max;
    }
    out << '\n';
  }
  return out.str();
}

PromptTable prompts_from_text(std::string_view text) {
  PromptTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() != 5 || fields[3].rfind("points=", 0) != 0 || fields[4].rfind("boxes=", 0) != 0) {
      throw std::runtime_error("malformed prompt manifest line: " + line);
    }
    PromptSet set;
    set.mode = parse_prompt_mode(fields[2]);
    const std::string points = fields[3].substr(7);
    const std::string boxes = fields[4].substr(6);
    if (!points.empty()) {
      for (const auto& item : split(points, ';')) {
        auto v = split(item, ',');
        if (v.size() != 3) throw std::runtime_error("malformed point in prompt manifest: " + item);
        set.points.push_back({std::stoi(v[0]), std::stoi(v[1]), std::stoi(v[2])});
      }
    }
    if (!boxes.empty()) {
      for (const auto& item : split(boxes, ';')) {
        auto v = split(item, ',');
        if (v.size() != 4) throw std::runtime_error("malformed box in prompt manifest: " + item);
        set.boxes.push_back({std::stoi(v[0]), std::stoi(v[1]), std::stoi(v[2]), std::stoi(v[3])});
      }
    }
    set.validate();
    table.emplace(fields[0], std::move(set));
  }
  return table;
}

}  // namespace lungsam

#include "lungsam/io.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <stdexcept>

namespace lungsam {

ByteGrid read_gray_image(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (raw.empty()) throw std::runtime_error("cannot read image: " + path.string());
  if (raw.channels() == 3) {
    cv::cvtColor(raw, raw, cv::COLOR_BGR2GRAY);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, raw, cv::COLOR_BGRA2GRAY);
  }
  cv::Mat gray;
  if (raw.depth() == CV_8U) {
    gray = raw;
  } else {
    double lo = 0.0, hi = 0.0;
    cv::minMaxLoc(raw, &lo, &hi);
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    raw.convertTo(gray, CV_8U, scale, -lo * scale);
  }
  ByteGrid out(gray.rows, gray.cols);
  for (int r = 0; r < gray.rows; ++r) {
    std::memcpy(&out(r, 0), gray.ptr<std::uint8_t>(r), static_cast<std::size_t>(gray.cols));
  }
  return out;
}

void write_gray_png(const fs::path& path, const ByteGrid& pixels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat view(pixels.rows(), pixels.cols(), CV_8UC1, const_cast<std::uint8_t*>(pixels.data()));
  if (!cv::imwrite(path.string(), view)) throw std::runtime_error("cannot write image: " + path.string());
}

void write_npy_f32(const fs::path& path, const Grid<float>& values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(values.rows()) + ", " +
                       std::to_string(values.cols()) + "), }";
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

Grid<float> read_npy_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY\x01\x00", 8) != 0) throw std::runtime_error("not an NPY v1 file: " + path.string());
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  const std::size_t len = static_cast<std::size_t>(len_bytes[0]) | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
    throw std::runtime_error("unsupported NPY layout: " + path.string());
  }
  const auto open = header.find('(');
  const auto close = header.find(')');
  if (open == std::string::npos || close == std::string::npos) throw std::runtime_error("bad NPY shape: " + path.string());
  auto dims = split(header.substr(open + 1, close - open - 1), ',');
  if (dims.size() < 2) throw std::runtime_error("NPY array is not 2-D: " + path.string());
  const int rows = std::stoi(trim(dims[0]));
  const int cols = std::stoi(trim(dims[1]));
  Grid<float> values(rows, cols);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated NPY data: " + path.string());
  return values;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &digest_len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  const std::string text = read_text(path);
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("short write: " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.emplace_back(text.substr(start));
      return parts;
    }
    parts.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::string format_real(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
  return buf;
}

namespace {
std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;
}  // namespace

void log_warning(std::string_view message) {
  ++g_warnings;
  std::lock_guard lock(g_log_mutex);
  std::clog << "warning: " << message << '\n';
}

void log_info(std::string_view message) {
  if (g_quiet) return;
  std::lock_guard lock(g_log_mutex);
  std::clog << message << '\n';
}

std::size_t warning_count() { return g_warnings; }
void set_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace lungsam

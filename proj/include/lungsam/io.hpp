#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lungsam/grid.hpp"

namespace lungsam {

namespace fs = std::filesystem;

/// Reads a grayscale image of any bit depth into 8-bit values. 16-bit inputs are
/// min-max stretched to [0,255]; colour inputs are converted to luminance.
ByteGrid read_gray_image(const fs::path& path);

/// Writes an 8-bit grayscale PNG (lossless).
void write_gray_png(const fs::path& path, const ByteGrid& pixels);

/// Minimal NPY (format 1.0, little-endian float32, C order) support for soft masks.
void write_npy_f32(const fs::path& path, const Grid<float>& values);
Grid<float> read_npy_f32(const fs::path& path);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const fs::path& path);

std::string read_text(const fs::path& path);
/// Writes via a sibling temporary file and rename so readers never see a torn file.
void write_text(const fs::path& path, std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

/// Shortest round-trip decimal representation of a double.
std::string format_real(double value);
/// Fixed-precision formatting, e.g. format_fixed(0.9431, 3) == "0.943".
std::string format_fixed(double value, int digits);

/// Warning sink shared by the CLI and report code. Counts every warning.
void log_warning(std::string_view message);
void log_info(std::string_view message);
std::size_t warning_count();
void set_quiet(bool quiet);

}  // namespace lungsam

// SPDX-License-Identifier: Apache-2.0
//
// Netpbm (binary P5/P6, maxval 255) and CSV helpers.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace danet::io {

struct Image8 {
  std::int64_t width = 0, height = 0, channels = 1;  // 1 = PGM, 3 = PPM
  std::vector<std::uint8_t> pixels;                  // interleaved, row-major
};

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               std::span<const std::uint8_t> pixels);
void write_ppm(const std::string& path, std::int64_t width, std::int64_t height,
               std::span<const std::uint8_t> rgb);
/// Reads P5 or P6 with maxval 255; throws std::runtime_error on malformed input.
Image8 read_netpbm(const std::string& path);

/// Maps [min, max] linearly onto [0, 255] with round-half-up. A constant
/// input, or one whose spread is within 64 ulps of its magnitude, maps to
/// all zeros.
std::vector<std::uint8_t> quantize_minmax(std::span<const double> values);

/// 17 significant digits, enough to round-trip any double.
std::string format_double(double v);

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string csv_field(const std::string& s);
std::string csv_row(const std::vector<std::string>& fields);
/// Splits RFC 4180 text into records; quoted fields may span lines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

/// Row-major numeric matrix as CSV without header.
void write_matrix_csv(const std::string& path, std::int64_t rows, std::int64_t cols, std::span<const double> values);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
/// Creates `dir` and any missing parents.
void ensure_dir(const std::string& dir);

}  // namespace danet::io

// SPDX-License-Identifier: Apache-2.0
#include "danet/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace danet::io {

namespace {

void write_netpbm(const std::string& path, const char* magic, std::int64_t width, std::int64_t height,
                  std::int64_t channels, std::span<const std::uint8_t> pixels) {
  if (width < 1 || height < 1 || static_cast<std::int64_t>(pixels.size()) != width * height * channels) {
    throw std::invalid_argument("netpbm: pixel count does not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << magic << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height,
               std::span<const std::uint8_t> pixels) {
  write_netpbm(path, "P5", width, height, 1, pixels);
}

void write_ppm(const std::string& path, std::int64_t width, std::int64_t height,
               std::span<const std::uint8_t> rgb) {
  write_netpbm(path, "P6", width, height, 3, rgb);
}

Image8 read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const std::string magic = header_token(in);
  Image8 img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw std::runtime_error(path + ": not a binary PGM/PPM (magic '" + magic + "')");
  }
  try {
    img.width = std::stoll(header_token(in));
    img.height = std::stoll(header_token(in));
    if (std::stoll(header_token(in)) != 255) throw std::runtime_error(path + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw std::runtime_error(path + ": malformed header");
  }
  if (img.width < 1 || img.height < 1) throw std::runtime_error(path + ": bad extents");
  img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error(path + ": truncated pixel data");
  }
  return img;
}

std::vector<std::uint8_t> quantize_minmax(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  // Spreads of a few ulps are rounding noise, not signal.
  const double scale = std::max(std::abs(*lo), std::abs(*hi));
  if (!(range > 64 * std::numeric_limits<double>::epsilon() * scale)) return out;
  for (size_t i = 0; i < values.size(); ++i) {
    const double v = std::floor((values[i] - *lo) / range * 255.0 + 0.5);
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += csv_field(fields[i]);
  }
  out += "\r\n";
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_matrix_csv(const std::string& path, std::int64_t rows, std::int64_t cols, std::span<const double> values) {
  if (static_cast<std::int64_t>(values.size()) != rows * cols) {
    throw std::invalid_argument("write_matrix_csv: value count does not match shape");
  }
  std::string text;
  for (std::int64_t r = 0; r < rows; ++r) {
    std::vector<std::string> fields;
    for (std::int64_t c = 0; c < cols; ++c) fields.push_back(format_double(values[static_cast<size_t>(r * cols + c)]));
    text += csv_row(fields);
  }
  write_file(path, text);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << contents;
  if (!out) throw std::runtime_error("write failed: " + path);
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
}

}  // namespace danet::io

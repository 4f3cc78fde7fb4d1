// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "danet/io.hpp"

using namespace danet;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "danet_test_io";
  fs::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST(Quantize, MinMaxWithRoundHalfUp) {
  const std::vector<double> v{2.0, 2.5, 3.0, 2.25};
  // 0.25 of the range is 63.75 → 64; the midpoint 127.5 rounds up.
  EXPECT_EQ(io::quantize_minmax(v), (std::vector<std::uint8_t>{0, 128, 255, 64}));
}

TEST(Quantize, ConstantAndRoundingNoiseMapToZero) {
  EXPECT_EQ(io::quantize_minmax(std::vector<double>{0.3, 0.3, 0.3}), (std::vector<std::uint8_t>{0, 0, 0}));
  const double x = 1.0 / 30.0;
  const std::vector<double> noisy{x, std::nextafter(x, 1.0), std::nextafter(x, 0.0)};
  EXPECT_EQ(io::quantize_minmax(noisy), (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_TRUE(io::quantize_minmax(std::vector<double>{}).empty());
}

TEST(Netpbm, PgmAndPpmRoundTrip) {
  std::vector<std::uint8_t> gray(12), rgb(36);
  for (size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(i * 21);
  for (size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(255 - i * 7);
  io::write_pgm(temp_path("g.pgm"), 4, 3, gray);
  io::write_ppm(temp_path("c.ppm"), 4, 3, rgb);
  const auto g = io::read_netpbm(temp_path("g.pgm"));
  EXPECT_EQ(g.channels, 1);
  EXPECT_EQ(g.width, 4);
  EXPECT_EQ(g.height, 3);
  EXPECT_EQ(g.pixels, gray);
  EXPECT_EQ(io::read_file(temp_path("g.pgm")).rfind("P5\n4 3\n255\n", 0), 0u);
  const auto c = io::read_netpbm(temp_path("c.ppm"));
  EXPECT_EQ(c.channels, 3);
  EXPECT_EQ(c.pixels, rgb);
}

TEST(Netpbm, HeaderCommentsAreSkipped) {
  io::write_file(temp_path("comment.pgm"), std::string("P5\n# made by hand\n2 1\n255\n") + "\x01\x02");
  const auto g = io::read_netpbm(temp_path("comment.pgm"));
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{1, 2}));
}

TEST(Netpbm, MalformedFilesThrow) {
  io::write_file(temp_path("p2.pgm"), "P2\n1 1\n255\n0\n");
  EXPECT_THROW(io::read_netpbm(temp_path("p2.pgm")), std::runtime_error);
  io::write_file(temp_path("short.pgm"), "P5\n4 4\n255\n\x01");
  EXPECT_THROW(io::read_netpbm(temp_path("short.pgm")), std::runtime_error);
  io::write_file(temp_path("maxval.pgm"), "P5\n1 1\n65535\n\x01\x01");
  EXPECT_THROW(io::read_netpbm(temp_path("maxval.pgm")), std::runtime_error);
  EXPECT_THROW(io::read_netpbm(temp_path("absent.pgm")), std::runtime_error);
  EXPECT_THROW(io::write_pgm(temp_path("bad.pgm"), 2, 2, std::vector<std::uint8_t>(3)), std::invalid_argument);
}

TEST(Csv, QuotingFollowsRfc4180) {
  EXPECT_EQ(io::csv_field("plain"), "plain");
  EXPECT_EQ(io::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(io::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(io::csv_field("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(io::csv_row({"x", "1,2", ""}), "x,\"1,2\",\r\n");
}

TEST(Csv, ParseInvertsWriting) {
  const std::vector<std::vector<std::string>> rows{{"a", "b,c", "d\"e"}, {"multi\r\nline", "", "z"}};
  std::string text;
  for (const auto& r : rows) text += io::csv_row(r);
  EXPECT_EQ(io::parse_csv(text), rows);
}

TEST(Csv, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -4.9e-324, std::numeric_limits<double>::max()}) {
    EXPECT_EQ(std::strtod(io::format_double(v).c_str(), nullptr), v) << io::format_double(v);
  }
  const std::vector<double> m{0.1, 0.2, 0.3, 1e-17, -2.5, 7};
  io::write_matrix_csv(temp_path("m.csv"), 2, 3, m);
  const auto rows = io::parse_csv(io::read_file(temp_path("m.csv")));
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_EQ(rows[1].size(), 3u);
  for (size_t i = 0; i < 6; ++i) EXPECT_EQ(std::stod(rows[i / 3][i % 3]), m[i]);
}

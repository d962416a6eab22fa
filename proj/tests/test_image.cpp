#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dge/image.hpp"
#include "dge/ops.hpp"
#include "helpers.hpp"

using namespace dge;

namespace {

std::vector<uint8_t> bytes_of(const char* s) {
  return std::vector<uint8_t>(s, s + std::char_traits<char>::length(s));
}

}  // namespace

TEST_CASE("single gray pixel decodes exactly") {
  auto data = bytes_of("P5\n1 1\n255\n");
  data.push_back(7);
  const ImageBuffer img = decode_netpbm(data);
  REQUIRE(img.width == 1);
  REQUIRE(img.height == 1);
  REQUIRE(img.channels == 1);
  REQUIRE(img.samples == std::vector<uint8_t>({7}));
}

TEST_CASE("rgb pixels decode in sample order") {
  auto data = bytes_of("P6\n2 1\n255\n");
  for (uint8_t b : {255, 0, 0, 0, 0, 255}) data.push_back(b);
  const ImageBuffer img = decode_netpbm(data);
  REQUIRE(img.width == 2);
  REQUIRE(img.height == 1);
  REQUIRE(img.channels == 3);
  REQUIRE(img.samples == std::vector<uint8_t>({255, 0, 0, 0, 0, 255}));
}

TEST_CASE("header comments and odd whitespace are tolerated") {
  auto data = bytes_of("P5 # magic\n# a comment line\n  2\t1 # dims\n # more\n 255\n");
  data.push_back(9);
  data.push_back(10);
  const ImageBuffer img = decode_netpbm(data);
  REQUIRE(img.width == 2);
  REQUIRE(img.samples == std::vector<uint8_t>({9, 10}));
}

TEST_CASE("malformed headers are rejected with a reason") {
  using Catch::Matchers::ContainsSubstring;
  REQUIRE_THROWS_WITH(decode_netpbm(bytes_of("P4\n1 1\n255\n\0")), ContainsSubstring("PGM"));
  REQUIRE_THROWS_WITH(decode_netpbm(bytes_of("P5\n1 1\n254\n\0")), ContainsSubstring("maxval"));
  auto short_data = bytes_of("P6\n2 2\n255\n");
  short_data.push_back(1);  // needs 12 samples
  REQUIRE_THROWS_AS(decode_netpbm(short_data), io_error);
  REQUIRE_THROWS_AS(decode_netpbm(bytes_of("P5\n1\n")), io_error);
  REQUIRE_THROWS_AS(decode_netpbm(bytes_of("P5\n0 4\n255\n")), io_error);
}

TEST_CASE("encode then decode recovers random images exactly") {
  Rng rng(101);
  for (int channels : {1, 3}) {
    ImageBuffer img;
    img.width = 13;
    img.height = 7;
    img.channels = channels;
    img.samples.resize(size_t(13 * 7 * channels));
    for (auto& s : img.samples) s = uint8_t(rng.uniform() * 256);

    const ImageBuffer back = decode_netpbm(encode_netpbm(img));
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    REQUIRE(back.channels == img.channels);
    REQUIRE(back.samples == img.samples);
  }
}

TEST_CASE("file save and load round-trip") {
  Rng rng(102);
  ImageBuffer img;
  img.width = 5;
  img.height = 4;
  img.channels = 3;
  img.samples.resize(60);
  for (auto& s : img.samples) s = uint8_t(rng.uniform() * 256);

  const auto path = std::filesystem::temp_directory_path() / "dge_test_img.ppm";
  save_image(img, path.string());
  const ImageBuffer back = load_image(path.string());
  REQUIRE(back.samples == img.samples);
  std::filesystem::remove(path);

  REQUIRE_THROWS_AS(load_image("/nonexistent/x.ppm"), io_error);
}

TEST_CASE("preprocess at target size divides by 255 exactly") {
  ImageBuffer img;
  img.width = 4;
  img.height = 4;
  img.channels = 1;
  img.samples.resize(16);
  for (size_t i = 0; i < 16; ++i) img.samples[i] = uint8_t(i * 16);

  const Tensor t = preprocess(img, 4, 1);
  REQUIRE(t.shape() == std::vector<int>({1, 1, 4, 4}));
  for (int64_t i = 0; i < 16; ++i) REQUIRE(t[i] == float(img.samples[size_t(i)]) / 255.0f);
}

TEST_CASE("preprocess maps all-255 to ones") {
  ImageBuffer img;
  img.width = 6;
  img.height = 3;
  img.channels = 3;
  img.samples.assign(54, 255);
  const Tensor t = preprocess(img, 8, 3);
  REQUIRE(t.shape() == std::vector<int>({1, 3, 8, 8}));
  for (int64_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 1.0f);
}

TEST_CASE("preprocess resize equals the tensor-core bilinear path") {
  Rng rng(103);
  ImageBuffer img;
  img.width = 9;
  img.height = 5;
  img.channels = 3;
  img.samples.resize(size_t(9 * 5 * 3));
  for (auto& s : img.samples) s = uint8_t(rng.uniform() * 256);

  Tensor planar({1, 3, 5, 9});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c)
        planar.at4(0, c, y, x) = float(img.samples[size_t((y * 9 + x) * 3 + c)]) / 255.0f;

  const Tensor got = preprocess(img, 8, 3);
  REQUIRE(th::bitwise_equal(got, bilinear_resize(planar, 8, 8)));
}

TEST_CASE("gray input replicates across the channels a branch expects") {
  ImageBuffer img;
  img.width = 4;
  img.height = 4;
  img.channels = 1;
  img.samples.resize(16);
  for (size_t i = 0; i < 16; ++i) img.samples[i] = uint8_t(10 + i);

  const Tensor t = preprocess(img, 4, 3);
  REQUIRE(t.shape() == std::vector<int>({1, 3, 4, 4}));
  for (int c = 1; c < 3; ++c)
    for (int i = 0; i < 16; ++i)
      REQUIRE(t[int64_t(c) * 16 + i] == t[i]);

  // a color image cannot feed a single-channel branch
  ImageBuffer rgb;
  rgb.width = rgb.height = 4;
  rgb.channels = 3;
  rgb.samples.assign(48, 1);
  REQUIRE_THROWS_AS(preprocess(rgb, 4, 1), validation_error);
}

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dge/errors.hpp"
#include "dge/ops.hpp"
#include "dge/tensor.hpp"

// Binary Netpbm codec: P5 (grayscale) and P6 (RGB), maxval 255 only. The
// header grammar allows arbitrary whitespace and '#' comments between
// tokens; exactly one whitespace byte separates the maxval from the sample
// data. From other formats: `magick in.png out.ppm` or
// `convert in.png -colorspace gray out.pgm`.

namespace dge {

struct ImageBuffer {
  int width = 0, height = 0, channels = 0;  // channels: 1 (gray) or 3 (RGB)
  std::vector<uint8_t> samples;             // row-major, interleaved

  int64_t expected_samples() const { return int64_t(width) * height * channels; }
};

namespace detail {

struct ByteCursor {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  uint8_t peek() const { return bytes[pos]; }
};

inline bool is_pbm_space(uint8_t c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

inline void skip_space_and_comments(ByteCursor& cur) {
  while (!cur.eof()) {
    if (is_pbm_space(cur.peek())) {
      ++cur.pos;
    } else if (cur.peek() == '#') {
      while (!cur.eof() && cur.peek() != '\n') ++cur.pos;
    } else {
      return;
    }
  }
}

inline int read_pbm_int(ByteCursor& cur, const char* what) {
  skip_space_and_comments(cur);
  if (cur.eof() || cur.peek() < '0' || cur.peek() > '9') {
    throw io_error(std::string("image: expected ") + what + " at byte " + std::to_string(cur.pos));
  }
  int64_t v = 0;
  while (!cur.eof() && cur.peek() >= '0' && cur.peek() <= '9') {
    v = v * 10 + (cur.peek() - '0');
    if (v > 1 << 30) throw io_error(std::string("image: ") + what + " out of range");
    ++cur.pos;
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline ImageBuffer decode_netpbm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw io_error("image: not a binary PGM (P5) or PPM (P6) file");
  }
  ImageBuffer img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  detail::ByteCursor cur{bytes, 2};
  img.width = detail::read_pbm_int(cur, "width");
  img.height = detail::read_pbm_int(cur, "height");
  const int maxval = detail::read_pbm_int(cur, "maxval");
  if (img.width < 1 || img.height < 1) throw io_error("image: non-positive dimensions");
  if (maxval != 255) {
    throw io_error("image: maxval " + std::to_string(maxval) + " unsupported (need 255)");
  }
  if (cur.eof() || !detail::is_pbm_space(cur.peek())) {
    throw io_error("image: missing whitespace after maxval");
  }
  ++cur.pos;
  const int64_t want = img.expected_samples();
  if (static_cast<int64_t>(bytes.size() - cur.pos) < want) {
    throw io_error("image: sample data short, have " + std::to_string(bytes.size() - cur.pos) +
                   " bytes, need " + std::to_string(want));
  }
  img.samples.assign(bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos + static_cast<size_t>(want)));
  return img;
}

inline std::vector<uint8_t> encode_netpbm(const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw validation_error("image: channels must be 1 or 3, got " + std::to_string(img.channels));
  }
  if (static_cast<int64_t>(img.samples.size()) != img.expected_samples()) {
    throw validation_error("image: sample count " + std::to_string(img.samples.size()) +
                           " does not match " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + "x" + std::to_string(img.channels));
  }
  std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                       std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.samples.begin(), img.samples.end());
  return out;
}

inline ImageBuffer load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open image: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw io_error("read failed: " + path);
  try {
    return decode_netpbm(bytes);
  } catch (const io_error& e) {
    throw io_error(std::string(e.what()) + " (" + path + ")");
  }
}

inline void save_image(const ImageBuffer& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for writing: " + path);
  const auto bytes = encode_netpbm(img);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("write failed: " + path);
}

/// Scales samples to [0,1], bilinearly resizes to side x side (tensor-core
/// resize), and replicates grayscale when the model wants more channels.
inline Tensor preprocess(const ImageBuffer& img, int side, int want_channels) {
  if (img.channels != want_channels && img.channels != 1) {
    throw validation_error("image: has " + std::to_string(img.channels) +
                           " channels, model expects " + std::to_string(want_channels));
  }
  Tensor t({1, img.channels, img.height, img.width});
  float* p = t.data();
  const int64_t hw = int64_t(img.height) * img.width;
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < img.channels; ++c) {
      p[c * hw + i] = float(img.samples[static_cast<size_t>(i * img.channels + c)]) / 255.0f;
    }
  }
  t = bilinear_resize(t, side, side);
  if (img.channels != want_channels) {
    std::vector<Tensor> copies(static_cast<size_t>(want_channels), t);
    t = concat(copies, 1);
  }
  return t;
}

}  // namespace dge

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dge/errors.hpp"

// Plain-text model configuration: one `key = value` per line, `#` starts a
// comment, blank lines are skipped. Unknown keys, duplicate keys and invalid
// values are validation errors that name the offending line.

namespace dge {

struct ModelConfig {
  int side = 64;  // square input resolution
  int ir_channels = 3;
  int rgb_channels = 3;
  int c2 = 16, c3 = 32, c4 = 64, c5 = 128;  // backbone widths at strides 4/8/16/32
  std::array<int, 4> c2f_depths = {1, 1, 1, 1};
  int ema_groups = 4;
  int low_rep_depth = 2;
  int high_tf_depth = 1;
  int high_tf_heads = 4;
  int classes = 5;
  int head_width = 64;
  float score_thresh = 0.25f;
  float iou_thresh = 0.45f;
  uint64_t seed = 1;
  std::vector<std::string> class_names_override;  // empty means defaults

  bool operator==(const ModelConfig&) const = default;

  std::vector<std::string> class_names() const {
    if (!class_names_override.empty()) return class_names_override;
    if (classes == 5) return {"car", "truck", "freight car", "bus", "van"};
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(classes));
    for (int i = 0; i < classes; ++i) names.push_back("class_" + std::to_string(i));
    return names;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw validation_error("config: " + msg); };
    if (side < 32 || side % 32 != 0) {
      fail("side must be a positive multiple of 32, got " + std::to_string(side));
    }
    if (ir_channels < 1 || ir_channels > 16) fail("ir_channels out of range [1,16]");
    if (rgb_channels < 1 || rgb_channels > 16) fail("rgb_channels out of range [1,16]");
    const std::array<std::pair<const char*, int>, 4> widths = {
        std::pair{"c2", c2}, std::pair{"c3", c3}, std::pair{"c4", c4}, std::pair{"c5", c5}};
    for (const auto& [name, v] : widths) {
      if (v < 2 || v > 2048) fail(std::string(name) + " out of range [2,2048]");
      if (v % 2 != 0) fail(std::string(name) + " must be even, got " + std::to_string(v));
    }
    if (!(c2 < c3 && c3 < c4 && c4 < c5)) fail("widths must be strictly increasing: c2 < c3 < c4 < c5");
    for (int d : c2f_depths) {
      if (d < 0 || d > 8) fail("c2f_depths entries must be in [0,8]");
    }
    if (ema_groups < 1) fail("ema_groups must be >= 1");
    for (const auto& [name, v] : widths) {
      if (v % ema_groups != 0) {
        fail("ema_groups (" + std::to_string(ema_groups) + ") must divide " + name + " (" +
             std::to_string(v) + ")");
      }
    }
    if (low_rep_depth < 0 || low_rep_depth > 8) fail("low_rep_depth out of range [0,8]");
    if (high_tf_depth < 0 || high_tf_depth > 8) fail("high_tf_depth out of range [0,8]");
    const int high_dim = c3 + c4 + c5;
    if (high_tf_heads < 1 || high_dim % high_tf_heads != 0) {
      fail("high_tf_heads (" + std::to_string(high_tf_heads) + ") must divide c3+c4+c5 (" +
           std::to_string(high_dim) + ")");
    }
    if (classes < 1 || classes > 1000) fail("classes out of range [1,1000]");
    if (head_width < 4 || head_width > 1024) fail("head_width out of range [4,1024]");
    if (!(score_thresh >= 0.0f && score_thresh < 1.0f)) fail("score_thresh must be in [0,1)");
    if (!(iou_thresh > 0.0f && iou_thresh < 1.0f)) fail("iou_thresh must be in (0,1)");
    if (!class_names_override.empty()) {
      if (static_cast<int>(class_names_override.size()) != classes) {
        fail("class_names has " + std::to_string(class_names_override.size()) + " entries, expected " +
             std::to_string(classes));
      }
      for (const auto& n : class_names_override) {
        if (n.empty()) fail("class_names entries must be non-empty");
      }
    }
  }

  std::string to_string() const {
    std::ostringstream out;
    out << "side = " << side << "\n";
    out << "ir_channels = " << ir_channels << "\n";
    out << "rgb_channels = " << rgb_channels << "\n";
    out << "c2 = " << c2 << "\n";
    out << "c3 = " << c3 << "\n";
    out << "c4 = " << c4 << "\n";
    out << "c5 = " << c5 << "\n";
    out << "c2f_depths = " << c2f_depths[0] << "," << c2f_depths[1] << "," << c2f_depths[2] << ","
        << c2f_depths[3] << "\n";
    out << "ema_groups = " << ema_groups << "\n";
    out << "low_rep_depth = " << low_rep_depth << "\n";
    out << "high_tf_depth = " << high_tf_depth << "\n";
    out << "high_tf_heads = " << high_tf_heads << "\n";
    out << "classes = " << classes << "\n";
    out << "head_width = " << head_width << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", double(score_thresh));
    out << "score_thresh = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.9g", double(iou_thresh));
    out << "iou_thresh = " << buf << "\n";
    out << "seed = " << seed << "\n";
    if (!class_names_override.empty()) {
      out << "class_names = ";
      for (size_t i = 0; i < class_names_override.size(); ++i) {
        if (i) out << ",";
        out << class_names_override[i];
      }
      out << "\n";
    }
    return out.str();
  }

  static ModelConfig from_string(const std::string& text);
  static ModelConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    if (f.bad()) throw io_error("read failed: " + path);
    return from_string(buf.str());
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long long parse_ll(const std::string& value, int line_no, const std::string& key) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw validation_error("config line " + std::to_string(line_no) + ": '" + key +
                           "' needs an integer, got '" + value + "'");
  }
  if (used != value.size()) {
    throw validation_error("config line " + std::to_string(line_no) + ": '" + key +
                           "' has trailing characters in '" + value + "'");
  }
  return v;
}

inline double parse_real(const std::string& value, int line_no, const std::string& key) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw validation_error("config line " + std::to_string(line_no) + ": '" + key +
                           "' needs a number, got '" + value + "'");
  }
  if (used != value.size()) {
    throw validation_error("config line " + std::to_string(line_no) + ": '" + key +
                           "' has trailing characters in '" + value + "'");
  }
  return v;
}

inline std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(value);
  while (std::getline(in, cur, ',')) parts.push_back(trim(cur));
  if (!value.empty() && value.back() == ',') parts.push_back("");
  return parts;
}

}  // namespace detail

inline ModelConfig ModelConfig::from_string(const std::string& text) {
  ModelConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw validation_error("config line " + std::to_string(line_no) + ": expected key = value, got '" +
                             line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw validation_error("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(key).second) {
      throw validation_error("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }

    auto as_int = [&](int lo, int hi) {
      long long v = detail::parse_ll(value, line_no, key);
      if (v < lo || v > hi) {
        throw validation_error("config line " + std::to_string(line_no) + ": '" + key +
                               "' out of range [" + std::to_string(lo) + "," + std::to_string(hi) +
                               "]");
      }
      return static_cast<int>(v);
    };

    if (key == "side") cfg.side = as_int(1, 1 << 16);
    else if (key == "ir_channels") cfg.ir_channels = as_int(1, 1 << 16);
    else if (key == "rgb_channels") cfg.rgb_channels = as_int(1, 1 << 16);
    else if (key == "c2") cfg.c2 = as_int(1, 1 << 16);
    else if (key == "c3") cfg.c3 = as_int(1, 1 << 16);
    else if (key == "c4") cfg.c4 = as_int(1, 1 << 16);
    else if (key == "c5") cfg.c5 = as_int(1, 1 << 16);
    else if (key == "c2f_depths") {
      const auto parts = detail::split_commas(value);
      if (parts.size() == 1) {
        const int d = static_cast<int>(detail::parse_ll(parts[0], line_no, key));
        cfg.c2f_depths = {d, d, d, d};
      } else if (parts.size() == 4) {
        for (int i = 0; i < 4; ++i) {
          cfg.c2f_depths[static_cast<size_t>(i)] =
              static_cast<int>(detail::parse_ll(parts[static_cast<size_t>(i)], line_no, key));
        }
      } else {
        throw validation_error("config line " + std::to_string(line_no) +
                               ": c2f_depths needs 1 or 4 comma-separated integers");
      }
    } else if (key == "ema_groups") cfg.ema_groups = as_int(1, 1 << 16);
    else if (key == "low_rep_depth") cfg.low_rep_depth = as_int(0, 1 << 16);
    else if (key == "high_tf_depth") cfg.high_tf_depth = as_int(0, 1 << 16);
    else if (key == "high_tf_heads") cfg.high_tf_heads = as_int(1, 1 << 16);
    else if (key == "classes") cfg.classes = as_int(1, 1 << 16);
    else if (key == "head_width") cfg.head_width = as_int(1, 1 << 16);
    else if (key == "score_thresh") cfg.score_thresh = static_cast<float>(detail::parse_real(value, line_no, key));
    else if (key == "iou_thresh") cfg.iou_thresh = static_cast<float>(detail::parse_real(value, line_no, key));
    else if (key == "seed") {
      const long long v = detail::parse_ll(value, line_no, key);
      if (v < 0) {
        throw validation_error("config line " + std::to_string(line_no) + ": seed must be >= 0");
      }
      cfg.seed = static_cast<uint64_t>(v);
    } else if (key == "class_names") {
      cfg.class_names_override = detail::split_commas(value);
    } else {
      throw validation_error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace dge

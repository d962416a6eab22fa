#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dge/errors.hpp"
#include "dge/tensor.hpp"

// Binary tensor container. Byte-level layout (all integers little-endian):
//
//   magic   4 bytes  "DGEW"
//   version u32      1
//   count   u32      number of entries
//   entry:  name_len u16, name bytes (UTF-8), rank u8,
//           rank * extent u32, elems * float32 raw data
//
// Entries keep insertion order, so encode(decode(bytes)) == bytes.

namespace dge {

class WeightStore {
 public:
  static constexpr uint32_t kVersion = 1;

  void add(const std::string& name, const Tensor& t) {
    if (name.empty()) throw validation_error("weight store: empty tensor name");
    if (name.size() > 0xffff) throw validation_error("weight store: tensor name too long: " + name);
    if (!t.defined()) throw validation_error("weight store: undefined tensor for " + name);
    if (index_.count(name)) throw validation_error("weight store: duplicate tensor name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, t);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw validation_error("weight store: missing tensor: " + name);
    return entries_[it->second].second;
  }

  size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  std::vector<uint8_t> encode() const {
    std::vector<uint8_t> out;
    out.reserve(16);
    out.push_back('D');
    out.push_back('G');
    out.push_back('E');
    out.push_back('W');
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, t] : entries_) {
      put_u16(out, static_cast<uint16_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      out.push_back(static_cast<uint8_t>(t.rank()));
      for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.extent(i)));
      const float* p = t.data();
      for (int64_t i = 0; i < t.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &p[i], 4);
        put_u32(out, bits);
      }
    }
    return out;
  }

  static WeightStore decode(const std::vector<uint8_t>& bytes) {
    Cursor cur{bytes, 0};
    if (bytes.size() < 12) {
      throw validation_error("weight data: truncated header (" + std::to_string(bytes.size()) +
                             " bytes, need 12)");
    }
    if (bytes[0] != 'D' || bytes[1] != 'G' || bytes[2] != 'E' || bytes[3] != 'W') {
      throw validation_error("weight data: bad magic at byte 0");
    }
    cur.pos = 4;
    const uint32_t version = take_u32(cur, "version");
    if (version != kVersion) {
      throw validation_error("weight data: unsupported version " + std::to_string(version) +
                             " at byte 4");
    }
    const uint32_t count = take_u32(cur, "entry count");
    WeightStore store;
    for (uint32_t e = 0; e < count; ++e) {
      const size_t entry_at = cur.pos;
      const uint16_t name_len = take_u16(cur, "name length");
      if (name_len == 0) {
        throw validation_error("weight data: empty name in entry " + std::to_string(e) +
                               " at byte " + std::to_string(entry_at));
      }
      need(cur, name_len, "name");
      std::string name(reinterpret_cast<const char*>(bytes.data() + cur.pos), name_len);
      cur.pos += name_len;
      const uint8_t rank = take_u8(cur, "rank");
      if (rank < 1 || rank > 4) {
        throw validation_error("weight data: rank " + std::to_string(int(rank)) + " for '" + name +
                               "' at byte " + std::to_string(cur.pos - 1) + " (expected 1..4)");
      }
      std::vector<int> shape(rank);
      int64_t elems = 1;
      for (int i = 0; i < rank; ++i) {
        const uint32_t ext = take_u32(cur, "extent");
        if (ext == 0 || ext > 0x7fffffffu) {
          throw validation_error("weight data: bad extent " + std::to_string(ext) + " for '" + name +
                                 "' at byte " + std::to_string(cur.pos - 4));
        }
        shape[static_cast<size_t>(i)] = static_cast<int>(ext);
        elems *= ext;
        if (elems > (int64_t(1) << 31)) {
          throw validation_error("weight data: tensor '" + name + "' too large");
        }
      }
      need(cur, static_cast<size_t>(elems) * 4, "tensor data");
      std::vector<float> data(static_cast<size_t>(elems));
      for (int64_t i = 0; i < elems; ++i) {
        uint32_t bits = static_cast<uint32_t>(bytes[cur.pos]) |
                        (static_cast<uint32_t>(bytes[cur.pos + 1]) << 8) |
                        (static_cast<uint32_t>(bytes[cur.pos + 2]) << 16) |
                        (static_cast<uint32_t>(bytes[cur.pos + 3]) << 24);
        std::memcpy(&data[static_cast<size_t>(i)], &bits, 4);
        cur.pos += 4;
      }
      try {
        store.add(name, Tensor(shape, std::move(data)));
      } catch (const validation_error& err) {
        throw validation_error(std::string(err.what()) + " (entry " + std::to_string(e) +
                               " at byte " + std::to_string(entry_at) + ")");
      }
    }
    if (cur.pos != bytes.size()) {
      throw validation_error("weight data: " + std::to_string(bytes.size() - cur.pos) +
                             " trailing bytes at byte " + std::to_string(cur.pos));
    }
    return store;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    const auto bytes = encode();
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
  }

  static WeightStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw io_error("read failed: " + path);
    return decode(bytes);
  }

 private:
  struct Cursor {
    const std::vector<uint8_t>& bytes;
    size_t pos;
  };

  static void need(Cursor& cur, size_t n, const char* what) {
    if (cur.pos + n > cur.bytes.size()) {
      throw validation_error(std::string("weight data: truncated ") + what + " at byte " +
                             std::to_string(cur.pos));
    }
  }
  static uint8_t take_u8(Cursor& cur, const char* what) {
    need(cur, 1, what);
    return cur.bytes[cur.pos++];
  }
  static uint16_t take_u16(Cursor& cur, const char* what) {
    need(cur, 2, what);
    uint16_t v = static_cast<uint16_t>(cur.bytes[cur.pos] | (cur.bytes[cur.pos + 1] << 8));
    cur.pos += 2;
    return v;
  }
  static uint32_t take_u32(Cursor& cur, const char* what) {
    need(cur, 4, what);
    uint32_t v = static_cast<uint32_t>(cur.bytes[cur.pos]) |
                 (static_cast<uint32_t>(cur.bytes[cur.pos + 1]) << 8) |
                 (static_cast<uint32_t>(cur.bytes[cur.pos + 2]) << 16) |
                 (static_cast<uint32_t>(cur.bytes[cur.pos + 3]) << 24);
    cur.pos += 4;
    return v;
  }
  static void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
  }
  static void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace dge

#pragma once

// Binary tensor container (ADVT) and atomic file writing.
//
// Version 1 layout, little-endian throughout:
//   magic "ADVT" | version u16 | ndim u32 | dims u32[ndim] | dtype u32 | payload
// dtype tags: f32 = 0, f64 = 1. Payload is row-major.
//
// Version 2 is a named-record list reusing the same tensor layout per record:
//   magic "ADVT" | version u16 | nrecords u32 | records...
//   record: name_len u32 | name bytes | kind u32 (0 tensor, 1 text)
//     tensor: ndim u32 | dims u32[ndim] | dtype u32 | payload
//     text:   byte_len u64 | bytes
// Used for checkpoints (all registry tensors plus a text metadata record).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advstyle/common.hpp"
#include "advstyle/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "ADVT writer assumes a little-endian host");

namespace advstyle {

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename U>
void put_scalar(std::string& out, U v) {
  put_bytes(out, &v, sizeof(U));
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string ctx;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError(ctx + ": truncated file");
  }
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
  std::string get_str(std::size_t n) {
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

template <typename T>
constexpr std::uint32_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>)
    return 0;
  else {
    static_assert(std::is_same_v<T, double>, "ADVT supports f32/f64 only");
    return 1;
  }
}

template <typename T>
void encode_tensor_body(std::string& out, const Shape& shape, const std::vector<T>& data) {
  put_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_scalar<std::uint32_t>(out, dtype_tag<T>());
  put_bytes(out, data.data(), data.size() * sizeof(T));
}

template <typename T>
std::pair<Shape, std::vector<T>> decode_tensor_body(ByteReader& r) {
  const auto ndim = r.get<std::uint32_t>();
  if (ndim > 8) throw IoError(r.ctx + ": implausible ndim " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) d = r.get<std::uint32_t>();
  const auto tag = r.get<std::uint32_t>();
  if (tag != dtype_tag<float>() && tag != dtype_tag<double>())
    throw IoError(r.ctx + ": unknown dtype tag " + std::to_string(tag));
  const std::size_t n = shape_numel(shape);
  std::vector<T> data(n);
  if (tag == dtype_tag<T>()) {
    r.need(n * sizeof(T));
    std::memcpy(data.data(), r.buf.data() + r.pos, n * sizeof(T));
    r.pos += n * sizeof(T);
  } else if (tag == 0) {  // f32 file read as f64
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(r.template get<float>());
  } else {  // f64 file read as f32
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(r.template get<double>());
  }
  return {std::move(shape), std::move(data)};
}

}  // namespace detail

// Writes bytes to a temporary file in the target directory, then renames over
// the destination, so readers never observe a partial file.
inline void atomic_write_file(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path dest(path);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  const fs::path tmp = dest.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

template <typename T>
std::string encode_advt(const Shape& shape, const std::vector<T>& data) {
  require_shape(shape_numel(shape) == data.size(), "encode_advt", shape, {data.size()});
  std::string out;
  out.reserve(16 + shape.size() * 4 + data.size() * sizeof(T));
  detail::put_bytes(out, "ADVT", 4);
  detail::put_scalar<std::uint16_t>(out, 1);
  detail::encode_tensor_body(out, shape, data);
  return out;
}

template <typename T>
void save_advt(const std::string& path, const Shape& shape, const std::vector<T>& data) {
  atomic_write_file(path, encode_advt(shape, data));
}

template <typename T>
void save_advt(const std::string& path, const Tensor<T>& t) {
  save_advt(path, t.shape(), t.data());
}

template <typename T>
std::pair<Shape, std::vector<T>> load_advt(const std::string& path) {
  const std::string bytes = read_file(path);
  detail::ByteReader r{bytes, 0, path};
  if (r.get_str(4) != "ADVT") throw IoError(path + ": bad magic, not an ADVT file");
  const auto version = r.get<std::uint16_t>();
  if (version != 1) throw IoError(path + ": expected ADVT v1, got v" + std::to_string(version));
  auto body = detail::decode_tensor_body<T>(r);
  if (r.pos != bytes.size()) throw IoError(path + ": trailing bytes after payload");
  return body;
}

// Named-record container (ADVT v2). Records keep insertion order on write;
// lookup is by name.
template <typename T>
struct RecordFile {
  struct Record {
    std::string name;
    bool is_text = false;
    Shape shape;          // tensor records
    std::vector<T> data;  // tensor records
    std::string text;     // text records
  };
  std::vector<Record> records;

  void add_tensor(const std::string& name, const Shape& shape, std::vector<T> data) {
    records.push_back({name, false, shape, std::move(data), {}});
  }
  void add_text(const std::string& name, std::string text) {
    records.push_back({name, true, {}, {}, std::move(text)});
  }
  const Record& find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return r;
    throw IoError("record not found: " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return true;
    return false;
  }

  std::string encode() const {
    std::string out;
    detail::put_bytes(out, "ADVT", 4);
    detail::put_scalar<std::uint16_t>(out, 2);
    detail::put_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
      detail::put_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
      detail::put_bytes(out, r.name.data(), r.name.size());
      detail::put_scalar<std::uint32_t>(out, r.is_text ? 1u : 0u);
      if (r.is_text) {
        detail::put_scalar<std::uint64_t>(out, r.text.size());
        detail::put_bytes(out, r.text.data(), r.text.size());
      } else {
        detail::encode_tensor_body(out, r.shape, r.data);
      }
    }
    return out;
  }

  void save(const std::string& path) const { atomic_write_file(path, encode()); }

  static RecordFile load(const std::string& path) {
    const std::string bytes = read_file(path);
    detail::ByteReader r{bytes, 0, path};
    if (r.get_str(4) != "ADVT") throw IoError(path + ": bad magic, not an ADVT file");
    const auto version = r.get<std::uint16_t>();
    if (version != 2) throw IoError(path + ": expected ADVT v2, got v" + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    RecordFile rf;
    for (std::uint32_t i = 0; i < count; ++i) {
      Record rec;
      const auto name_len = r.get<std::uint32_t>();
      rec.name = r.get_str(name_len);
      const auto kind = r.get<std::uint32_t>();
      if (kind == 1) {
        rec.is_text = true;
        const auto len = r.get<std::uint64_t>();
        rec.text = r.get_str(len);
      } else if (kind == 0) {
        auto body = detail::decode_tensor_body<T>(r);
        rec.shape = std::move(body.first);
        rec.data = std::move(body.second);
      } else {
        throw IoError(path + ": unknown record kind " + std::to_string(kind));
      }
      rf.records.push_back(std::move(rec));
    }
    if (r.pos != bytes.size()) throw IoError(path + ": trailing bytes after payload");
    return rf;
  }
};

}  // namespace advstyle

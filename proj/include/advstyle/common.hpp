#pragma once

// Shared error types, shape utilities, and small helpers used across modules.

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace advstyle {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValueError : public std::runtime_error {
public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline void require_shape(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

// FNV-1a 64-bit, used for config hashing and seed derivation tags.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace advstyle

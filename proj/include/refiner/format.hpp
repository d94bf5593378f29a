#pragma once

#include <charconv>
#include <string>

namespace refiner {

/// Shortest round-trip decimal form; never locale dependent.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace refiner

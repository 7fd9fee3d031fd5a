#pragma once

#include <charconv>
#include <string>

namespace specequiv::detail {

/// 17 significant digits, enough to read back the same double.
inline std::string csv_number(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace specequiv::detail

#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace riskdiff {

// Decimal serialization with 17 significant digits: round-trips every double
// bitwise and is platform-independent, unlike iostream formatting.
inline std::string format_double(double v) {
  char buf[64];
  const std::to_chars_result r =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline double parse_double(const char* first, const char* last, bool& ok) {
  double v = 0.0;
  const std::from_chars_result r = std::from_chars(first, last, v);
  ok = (r.ec == std::errc{} && r.ptr == last);
  return v;
}

}  // namespace riskdiff

#pragma once

#include <charconv>
#include <string>

namespace advforge::detail {

// A float widened to the double with the same shortest decimal spelling, so
// 0.3f is written to JSON as 0.3 rather than 0.30000001192092896.
inline double json_number(float value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::stod(std::string(buf, res.ptr));
}

}  // namespace advforge::detail

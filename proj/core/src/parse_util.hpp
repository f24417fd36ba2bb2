#pragma once

#include <fmt/format.h>

#include <charconv>
#include <string_view>

#include "dirl/error.hpp"

namespace dirl::detail {

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(fmt::format("cannot parse '{}' as a number", s));
  }
  return v;
}

inline int parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(fmt::format("cannot parse '{}' as an integer", s));
  }
  return v;
}

}  // namespace dirl::detail

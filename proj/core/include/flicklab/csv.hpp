#pragma once

#include <cstdio>
#include <string>

namespace flicklab {

// Compact, locale-independent number formatting shared by every CSV the
// harness emits; identical doubles always produce identical bytes.
inline std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", value);
  return buf;
}

inline std::string format_number(int value) { return std::to_string(value); }

}  // namespace flicklab

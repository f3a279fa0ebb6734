#pragma once

namespace flicklab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace flicklab

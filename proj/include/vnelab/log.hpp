#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace vnelab::log {

// Warnings go to stderr only when VNE_LAB_LOG is set.
inline bool enabled() {
  static const bool on = std::getenv("VNE_LAB_LOG") != nullptr;
  return on;
}

inline void warn(std::string_view msg) {
  if (enabled()) std::cerr << "[vnelab] " << msg << '\n';
}

}  // namespace vnelab::log

#pragma once

#include <cstdint>

namespace vip {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr std::uint32_t kVipfFormatVersion = 1;

}  // namespace vip

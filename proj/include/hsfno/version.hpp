#pragma once

namespace hsfno {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace hsfno

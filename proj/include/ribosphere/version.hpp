#pragma once

namespace ribosphere {

inline constexpr const char* kVersion = "0.1.0";

} // namespace ribosphere

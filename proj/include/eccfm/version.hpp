#pragma once

namespace eccfm {

inline constexpr const char* kVersion = "0.1.0";

}

#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace blindac {

// Shortest decimal form that round-trips the exact double. Keeps every
// emitted file both stable across runs and reparsable bit-for-bit.
inline std::string fmt_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace blindac

#pragma once

#include <charconv>
#include <cmath>
#include <optional>
#include <string>

namespace mdm {

/// Shortest decimal text that round-trips the double; locale independent.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Empty field for a missing value.
inline std::string format_optional(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

}  // namespace mdm

#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "icedepth/error.hpp"

namespace icedepth::detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const char* first = s.data();
    if (!s.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(where + ": not a number: '" + std::string(s) + "'");
    }
    return v;
}

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace icedepth::detail

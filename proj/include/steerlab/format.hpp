#ifndef STEERLAB_FORMAT_HPP
#define STEERLAB_FORMAT_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace steerlab {

// Fixed 4-decimal rendering used in human-facing CSV tables. Negative zero and
// values that round to zero print as "0.0000".
inline std::string fixed4(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    std::string s(buf);
    if (s == "-0.0000") s = "0.0000";
    return s;
}

// Shortest representation that round-trips to the same double.
inline std::string shortest(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// Quotes a CSV field when it contains a separator, quote or newline.
inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

} // namespace steerlab

#endif // STEERLAB_FORMAT_HPP

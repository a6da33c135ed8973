#pragma once

#include <charconv>
#include <string>
#include <system_error>
#include <vector>

#include "gradcache/errors.hpp"

namespace gradcache {

// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw NumericError("failed to format a double");
    }
    return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError("bad numeric field: '" + s + "'");
    }
    return v;
}

inline int parse_int(const std::string& s) {
    int v = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError("bad integer field: '" + s + "'");
    }
    return v;
}

inline std::vector<std::string> split_fields(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

// Splits text into lines, dropping blank lines and '#' comments.
inline std::vector<std::string> data_lines(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty() && cur.back() == '\r') {
            cur.pop_back();
        }
        std::size_t start = cur.find_first_not_of(" \t");
        if (start != std::string::npos && cur[start] != '#') {
            out.push_back(cur);
        }
        cur.clear();
    };
    for (char ch : text) {
        if (ch == '\n') {
            flush();
        } else {
            cur.push_back(ch);
        }
    }
    flush();
    return out;
}

}  // namespace gradcache

#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace ibat {

// Shortest round-trippable decimal form; identical inputs give identical bytes.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_csv(const std::string& path, const std::string& header) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << header << "\n";
    return out;
}

} // namespace ibat

#pragma once

#include <algorithm>
#include <vector>

namespace degdit {

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Linear-interpolation percentile of a sorted vector, q in [0,1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    if (sorted.size() == 1) return sorted[0];
    double pos = q * static_cast<double>(sorted.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace degdit

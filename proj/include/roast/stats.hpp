#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace roast {

/// Quantile of `v` at level q in [0, 1], linear interpolation between order
/// statistics at position q*(n-1).
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw PreconditionError("quantile of an empty sequence");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw PreconditionError("mean of an empty sequence");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator).
inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw PreconditionError("sample variance needs at least two values");
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double sample_stddev(const std::vector<double>& v) { return std::sqrt(sample_variance(v)); }

}  // namespace roast

#pragma once

#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "fedpoison/errors.hpp"

namespace fedpoison {

/// Flat parameter vector w in R^n. Layout is defined by ModelSpec.
using ParameterVector = std::vector<double>;
/// Same layout as ParameterVector; carries d(loss)/dw.
using GradientVector = std::vector<double>;

namespace vec {

inline void require_same_size(std::span<const double> a, std::span<const double> b,
                              std::string_view what) {
    if (a.size() != b.size()) {
        throw InvalidArgument(std::string(what) + ": length mismatch (" +
                              std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

inline std::vector<double> add(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "vec::add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline std::vector<double> sub(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "vec::sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline std::vector<double> scaled(std::span<const double> a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
    return out;
}

/// y += c * x
inline void axpy(double c, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw InvalidArgument("vec::axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "vec::dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance2(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "vec::distance2");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace vec
}  // namespace fedpoison

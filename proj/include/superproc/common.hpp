#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>

namespace superproc {

inline constexpr int kMaxDim = 3;

/// A point of E = R^d, d <= kMaxDim. Unused trailing coordinates stay zero.
using Point = std::array<double, kMaxDim>;

using SpaceFn = std::function<double(const Point&)>;
using SpaceTimeFn = std::function<double(double, const Point&)>;

inline Point point1(double x) { return {x, 0.0, 0.0}; }

inline double norm(const Point& p) { return std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); }

inline bool all_finite(const Point& p) {
  return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

} // namespace superproc

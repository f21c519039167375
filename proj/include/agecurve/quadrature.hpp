#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "agecurve/error.hpp"

namespace agecurve {

/// `count` equally spaced points on [lo, hi]; the last point is exactly hi.
inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  return out;
}

/// Log-spaced grid, inclusive of both ends.
inline std::vector<double> logspace(double lo, double hi, std::size_t count) {
  require(lo > 0.0 && hi > 0.0, ErrorCode::InvalidArgument, "logspace bounds must be positive");
  auto exps = linspace(std::log10(lo), std::log10(hi), count);
  for (auto& e : exps) e = std::pow(10.0, e);
  if (count > 0) {
    exps.front() = lo;
    exps.back() = hi;
  }
  return exps;
}

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;  // sum to 2
};

/// n-point Gauss-Legendre rule by Newton iteration on P_n. Exact for
/// polynomials of degree <= 2n - 1.
inline GaussRule gauss_legendre(std::size_t n) {
  require(n >= 1, ErrorCode::InvalidArgument, "Gauss-Legendre needs at least one node");
  GaussRule rule{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  if (n == 1) {
    rule.weights[0] = 2.0;
    return rule;
  }
  const auto nd = static_cast<double>(n);
  // P_n(x) and P_n'(x) by the three-term recurrence
  auto legendre = [n, nd](double x) {
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const auto kd = static_cast<double>(k);
      const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
      p0 = p1;
      p1 = p2;
    }
    return std::pair{p1, nd * (x * p1 - p0) / (x * x - 1.0)};
  };
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
    for (int iter = 0; iter < 100; ++iter) {
      const auto [p, dp] = legendre(x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double dp = legendre(x).second;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Trapezoid weights on an arbitrary increasing grid.
inline std::vector<double> trapezoid_weights(std::span<const double> grid) {
  const std::size_t g = grid.size();
  std::vector<double> w(g, 0.0);
  for (std::size_t i = 0; i + 1 < g; ++i) {
    const double h = grid[i + 1] - grid[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

inline double trapezoid(std::span<const double> grid, std::span<const double> values) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) acc += 0.5 * (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]);
  return acc;
}

/// Composite Simpson on `points` equally spaced nodes (odd count).
template <typename F>
double simpson(F&& f, double a, double b, std::size_t points = 2001) {
  require(points >= 3 && points % 2 == 1, ErrorCode::InvalidArgument, "Simpson needs an odd point count >= 3");
  const std::size_t n = points - 1;
  const double h = (b - a) / static_cast<double>(n);
  double acc = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) {
    const double t = a + h * static_cast<double>(i);
    acc += (i % 2 == 1 ? 4.0 : 2.0) * f(t);
  }
  return acc * h / 3.0;
}

}  // namespace agecurve

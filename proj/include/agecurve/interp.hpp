#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "agecurve/error.hpp"

namespace agecurve {

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes: local,
/// shape preserving, and exact at the nodes.
class Pchip {
 public:
  Pchip() = default;

  Pchip(std::span<const double> x, std::span<const double> y) : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
    const std::size_t n = x_.size();
    require(n >= 2 && y_.size() == n, ErrorCode::InvalidArgument, "interpolation needs >= 2 matching nodes");
    for (std::size_t i = 1; i < n; ++i) require(x_[i] > x_[i - 1], ErrorCode::InvalidArgument, "nodes must increase");
    d_.assign(n, 0.0);
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0.0) continue;
      const double w1 = 2.0 * h[i] + h[i - 1];
      const double w2 = h[i] + 2.0 * h[i - 1];
      d_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
    d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  [[nodiscard]] double lo() const noexcept { return x_.front(); }
  [[nodiscard]] double hi() const noexcept { return x_.back(); }

  [[nodiscard]] double operator()(double t) const {
    const double tol = 1e-12 * (hi() - lo());
    require(t >= lo() - tol && t <= hi() + tol, ErrorCode::OutOfDomain, "interpolation point outside grid");
    t = std::clamp(t, lo(), hi());
    auto it = std::upper_bound(x_.begin(), x_.end(), t);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    if (i >= x_.size() - 1) i = x_.size() - 2;
    const double h = x_[i + 1] - x_[i];
    const double s = (t - x_[i]) / h;
    if (s == 0.0) return y_[i];
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] + h11 * h * d_[i + 1];
  }

 private:
  // one-sided three-point estimate, limited to keep monotonicity
  static double end_slope(double h0, double h1, double del0, double del1) {
    double d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if (d * del0 <= 0.0) {
      d = 0.0;
    } else if (del0 * del1 <= 0.0 && std::abs(d) > std::abs(3.0 * del0)) {
      d = 3.0 * del0;
    }
    return d;
  }

  std::vector<double> x_, y_, d_;
};

}  // namespace agecurve

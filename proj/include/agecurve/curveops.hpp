#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <tuple>
#include <utility>
#include <vector>

#include "agecurve/error.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve {

using Curve = std::function<double(double)>;

struct CurveSummary {
  double peak_age = 0.0;
  double peak_value = 0.0;
  std::pair<double, double> near_peak{0.0, 0.0};
  double integral = 0.0;
};

namespace detail {

inline void check_domain(std::pair<double, double> domain) {
  require(std::isfinite(domain.first) && std::isfinite(domain.second) && domain.first < domain.second,
          ErrorCode::InvalidArgument, "domain must be a finite interval with lo < hi");
}

}  // namespace detail

/// Global maximum: 2001-point scan, then golden section on the bracket.
/// Ties go to the smaller t.
inline std::pair<double, double> peak(const Curve& f, std::pair<double, double> domain, double tol = 1e-6) {
  detail::check_domain(domain);
  const auto [lo, hi] = domain;
  constexpr std::size_t points = 2001;
  const double h = (hi - lo) / static_cast<double>(points - 1);
  std::size_t best = 0;
  double best_value = f(lo);
  for (std::size_t i = 1; i < points; ++i) {
    const double v = f(i + 1 == points ? hi : lo + h * static_cast<double>(i));
    if (v > best_value) {
      best = i;
      best_value = v;
    }
  }
  const double best_t = best + 1 == points ? hi : lo + h * static_cast<double>(best);

  double a = best == 0 ? lo : lo + h * static_cast<double>(best - 1);
  double b = best + 1 >= points - 1 ? hi : lo + h * static_cast<double>(best + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double t = 0.5 * (a + b);
  const double v = f(t);
  // the refinement may not beat the scanned node (flat tops, kinks)
  if (v > best_value) return {t, v};
  return {best_t, best_value};
}

/// Maximal interval around the peak on which f >= (1 - fraction) * peak.
inline std::pair<double, double> near_peak_interval(const Curve& f, std::pair<double, double> domain,
                                                    double fraction = 0.10, double tol = 1e-6) {
  detail::check_domain(domain);
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::InvalidArgument, "fraction must lie in (0, 1)");
  const auto [t0, v0] = peak(f, domain, tol);
  require(v0 > 0.0, ErrorCode::NearPeakUndefined, "peak value must be positive");
  const double level = (1.0 - fraction) * v0;
  const auto [lo, hi] = domain;
  constexpr std::size_t points = 2001;
  const double h = (hi - lo) / static_cast<double>(points - 1);

  // walk outwards on the scan grid to the first node below the level, then bisect
  auto edge = [&](int dir) {
    double inside = t0;
    for (;;) {
      double next = inside + dir * h;
      if (dir < 0 && next <= lo) next = lo;
      if (dir > 0 && next >= hi) next = hi;
      if (f(next) < level) {
        double in = inside, out = next;
        while (std::abs(out - in) > tol) {
          const double mid = 0.5 * (in + out);
          (f(mid) >= level ? in : out) = mid;
        }
        return 0.5 * (in + out);
      }
      if (next == lo || next == hi) return next;
      inside = next;
    }
  };
  return {edge(-1), edge(+1)};
}

/// Area under the curve by composite Simpson on 2001 points.
inline double integral_measure(const Curve& f, std::pair<double, double> domain) {
  detail::check_domain(domain);
  return simpson(f, domain.first, domain.second, 2001);
}

/// Exact area under a spline: Gauss-Legendre with degree + 1 nodes on each
/// knot interval inside the domain.
inline double integral_measure(const SmoothedCurve& f, std::pair<double, double> domain) {
  detail::check_domain(domain);
  const double eps = 1e-12 * (f.spec.hi() - f.spec.lo());
  require(domain.first >= f.spec.lo() - eps && domain.second <= f.spec.hi() + eps, ErrorCode::OutOfDomain,
          "domain extends beyond the spline");
  std::vector<double> breaks{domain.first};
  for (double k : f.spec.interior_knots())
    if (k > domain.first && k < domain.second) breaks.push_back(k);
  breaks.push_back(domain.second);
  const auto rule = gauss_legendre(static_cast<std::size_t>(f.spec.degree()) + 1);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double half = 0.5 * (breaks[i + 1] - breaks[i]), mid = 0.5 * (breaks[i + 1] + breaks[i]);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) acc += half * rule.weights[q] * f(mid + half * rule.nodes[q]);
  }
  return acc;
}

inline CurveSummary summarize(const Curve& f, std::pair<double, double> domain, double fraction = 0.10) {
  CurveSummary s;
  std::tie(s.peak_age, s.peak_value) = peak(f, domain);
  s.near_peak = near_peak_interval(f, domain, fraction);
  s.integral = integral_measure(f, domain);
  return s;
}

}  // namespace agecurve

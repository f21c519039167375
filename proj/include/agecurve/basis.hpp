#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/error.hpp"
#include "agecurve/quadrature.hpp"

namespace agecurve {

/// Clamped B-spline basis of a given degree on [lo, hi] with strictly
/// increasing interior knots. Boundary knots are repeated degree + 1 times,
/// so the basis has degree + 1 + m functions and spans every polynomial of
/// degree <= `degree` on the domain. Immutable once built.
class BasisSpec {
 public:
  BasisSpec(int degree, std::vector<double> interior_knots, std::pair<double, double> endpoints)
      : degree_(degree), interior_(std::move(interior_knots)), lo_(endpoints.first), hi_(endpoints.second) {
    require(degree_ >= 0, ErrorCode::InvalidArgument, "degree must be non-negative");
    require(lo_ < hi_, ErrorCode::InvalidKnots, "endpoints must satisfy lo < hi");
    double prev = lo_;
    for (double k : interior_) {
      require(k > lo_ && k < hi_, ErrorCode::InvalidKnots, "interior knot " + std::to_string(k) + " outside endpoints");
      require(k > prev, ErrorCode::InvalidKnots, "interior knots must be strictly increasing");
      prev = k;
    }
    const auto reps = static_cast<std::size_t>(degree_) + 1;
    knots_.reserve(2 * reps + interior_.size());
    knots_.insert(knots_.end(), reps, lo_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), reps, hi_);
  }

  [[nodiscard]] int degree() const noexcept { return degree_; }
  [[nodiscard]] std::size_t dimension() const noexcept { return static_cast<std::size_t>(degree_) + 1 + interior_.size(); }
  [[nodiscard]] const std::vector<double>& interior_knots() const noexcept { return interior_; }
  [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
  [[nodiscard]] double lo() const noexcept { return lo_; }
  [[nodiscard]] double hi() const noexcept { return hi_; }
  [[nodiscard]] std::pair<double, double> domain() const noexcept { return {lo_, hi_}; }

  [[nodiscard]] bool contains(double t) const noexcept {
    const double tol = 1e-12 * (hi_ - lo_);
    return t >= lo_ - tol && t <= hi_ + tol;
  }

  /// Knot span index s with knots[s] <= t < knots[s+1]; the right endpoint
  /// maps to the last non-degenerate span (left-limit convention).
  [[nodiscard]] std::size_t find_span(double t) const {
    require(contains(t), ErrorCode::OutOfDomain,
            "t = " + std::to_string(t) + " outside [" + std::to_string(lo_) + ", " + std::to_string(hi_) + "]");
    const auto p = static_cast<std::size_t>(degree_);
    const std::size_t last = dimension() - 1;
    if (t >= knots_[last + 1]) return last;
    if (t <= knots_[p]) return p;
    const auto it = std::upper_bound(knots_.begin() + static_cast<std::ptrdiff_t>(p),
                                     knots_.begin() + static_cast<std::ptrdiff_t>(last + 1), t);
    return static_cast<std::size_t>(it - knots_.begin()) - 1;
  }

  /// Values of the degree+1 basis functions that can be nonzero at t, and
  /// their derivatives up to order `max_order`: result[r][j] is the r-th
  /// derivative of B_{span - degree + j}. Derivative recursion follows the
  /// standard triangular-table scheme.
  [[nodiscard]] std::vector<std::vector<double>> local_derivatives(double t, std::size_t span, int max_order) const {
    const int p = degree_;
    const int n = std::min(max_order, p);
    const auto pu = static_cast<std::size_t>(p) + 1;
    const double u = std::clamp(t, lo_, hi_);
    std::vector<std::vector<double>> ndu(pu, std::vector<double>(pu, 0.0));
    std::vector<double> left(pu, 0.0), right(pu, 0.0);
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = u - knots_[span + 1 - static_cast<std::size_t>(j)];
      right[j] = knots_[span + static_cast<std::size_t>(j)] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        ndu[j][r] = right[r + 1] + left[j - r];
        const double temp = ndu[r][j - 1] / ndu[j][r];
        ndu[r][j] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      ndu[j][j] = saved;
    }
    std::vector<std::vector<double>> ders(static_cast<std::size_t>(std::max(max_order, 0)) + 1,
                                          std::vector<double>(pu, 0.0));
    for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
    std::vector<std::vector<double>> a(2, std::vector<double>(pu, 0.0));
    for (int r = 0; r <= p; ++r) {
      int s1 = 0, s2 = 1;
      a[0][0] = 1.0;
      for (int k = 1; k <= n; ++k) {
        double d = 0.0;
        const int rk = r - k, pk = p - k;
        if (r >= k) {
          a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
          d = a[s2][0] * ndu[rk][pk];
        }
        const int j1 = rk >= -1 ? 1 : -rk;
        const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
        for (int j = j1; j <= j2; ++j) {
          a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
          d += a[s2][j] * ndu[rk + j][pk];
        }
        if (r <= pk) {
          a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
          d += a[s2][k] * ndu[r][pk];
        }
        ders[k][r] = d;
        std::swap(s1, s2);
      }
    }
    double factor = p;
    for (int k = 1; k <= n; ++k) {
      for (int j = 0; j <= p; ++j) ders[k][j] *= factor;
      factor *= (p - k);
    }
    return ders;
  }

  /// All J basis values (or derivatives of order `deriv_order`) at t.
  [[nodiscard]] std::vector<double> eval(double t, int deriv_order = 0) const {
    require(deriv_order >= 0, ErrorCode::InvalidArgument, "derivative order must be non-negative");
    const std::size_t span = find_span(t);
    std::vector<double> out(dimension(), 0.0);
    if (deriv_order > degree_) return out;
    const auto ders = local_derivatives(t, span, deriv_order);
    const std::size_t first = span - static_cast<std::size_t>(degree_);
    for (std::size_t j = 0; j <= static_cast<std::size_t>(degree_); ++j) out[first + j] = ders[deriv_order][j];
    return out;
  }

  /// Greville abscissae: the coefficients of f(t) = t in this basis.
  [[nodiscard]] std::vector<double> greville() const {
    require(degree_ >= 1, ErrorCode::InvalidArgument, "Greville abscissae need degree >= 1");
    std::vector<double> g(dimension(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
      double acc = 0.0;
      for (int i = 1; i <= degree_; ++i) acc += knots_[j + static_cast<std::size_t>(i)];
      g[j] = acc / degree_;
    }
    return g;
  }

  friend bool operator==(const BasisSpec& a, const BasisSpec& b) {
    return a.degree_ == b.degree_ && a.lo_ == b.lo_ && a.hi_ == b.hi_ && a.interior_ == b.interior_;
  }

 private:
  int degree_;
  std::vector<double> interior_;
  double lo_;
  double hi_;
  std::vector<double> knots_;
};

inline BasisSpec make_basis(int degree, std::vector<double> interior_knots, std::pair<double, double> endpoints) {
  return BasisSpec(degree, std::move(interior_knots), endpoints);
}

/// Equally spaced interior knots.
inline BasisSpec make_uniform_basis(int degree, std::size_t interior_count, std::pair<double, double> endpoints) {
  auto pts = linspace(endpoints.first, endpoints.second, interior_count + 2);
  return BasisSpec(degree, std::vector<double>(pts.begin() + 1, pts.end() - 1), endpoints);
}

inline std::vector<double> eval_basis(const BasisSpec& spec, double t, int deriv_order = 0) {
  return spec.eval(t, deriv_order);
}

/// n x J matrix of basis values (or derivatives) at the given points.
inline Eigen::MatrixXd design_matrix(const BasisSpec& spec, std::span<const double> ts, int deriv_order = 0) {
  const auto n = static_cast<Eigen::Index>(ts.size());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(spec.dimension()));
  if (deriv_order > spec.degree()) {
    for (double t : ts) (void)spec.find_span(t);
    return b;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = ts[static_cast<std::size_t>(i)];
    const std::size_t span = spec.find_span(t);
    const auto ders = spec.local_derivatives(t, span, deriv_order);
    const auto first = static_cast<Eigen::Index>(span) - spec.degree();
    for (int j = 0; j <= spec.degree(); ++j) b(i, first + j) = ders[static_cast<std::size_t>(deriv_order)][j];
  }
  return b;
}

/// Roughness penalty P(j,l) = integral of B_j'' B_l'' over the domain. The
/// integrand is piecewise polynomial of degree 2(k-2), so Gauss-Legendre with
/// ceil((2(k-2)+1)/2)+1 nodes per knot interval integrates it exactly.
inline Eigen::MatrixXd penalty_matrix(const BasisSpec& spec) {
  const auto dim = static_cast<Eigen::Index>(spec.dimension());
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(dim, dim);
  const int k = spec.degree();
  if (k < 2) return pen;
  const auto nodes = static_cast<std::size_t>((2 * (k - 2) + 2) / 2) + 1;
  const GaussRule rule = gauss_legendre(nodes);
  const auto& knots = spec.knots();
  for (std::size_t s = static_cast<std::size_t>(k); s + 1 < knots.size() - static_cast<std::size_t>(k); ++s) {
    const double a = knots[s], b = knots[s + 1];
    if (b <= a) continue;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double t = mid + half * rule.nodes[q];
      const double w = half * rule.weights[q];
      const auto ders = spec.local_derivatives(t, s, 2);
      const auto first = static_cast<Eigen::Index>(s) - k;
      for (int i = 0; i <= k; ++i) {
        for (int j = 0; j <= k; ++j) pen(first + i, first + j) += w * ders[2][i] * ders[2][j];
      }
    }
  }
  return 0.5 * (pen + pen.transpose());
}

}  // namespace agecurve

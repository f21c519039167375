#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/basis.hpp"
#include "agecurve/error.hpp"

namespace agecurve {

/// One subject's irregular repeated measurements.
struct PlayerSeries {
  std::string id;
  std::vector<double> times;
  std::vector<double> values;
  std::map<std::string, std::string> meta;

  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
};

inline void validate(const PlayerSeries& s) {
  require(s.times.size() == s.values.size(), ErrorCode::InvalidArgument,
          "series '" + s.id + "': times and values differ in length");
  require(!s.times.empty(), ErrorCode::InsufficientData, "series '" + s.id + "' is empty");
  for (std::size_t i = 1; i < s.times.size(); ++i) {
    require(s.times[i] > s.times[i - 1], ErrorCode::InvalidArgument,
            "series '" + s.id + "': times must be strictly increasing");
  }
}

/// A fitted curve: coefficients over a B-spline basis.
struct SmoothedCurve {
  BasisSpec spec;
  std::vector<double> coefficients;
  double lambda = 0.0;
  std::string subject_id;

  [[nodiscard]] double operator()(double t, int deriv_order = 0) const {
    const std::size_t span = spec.find_span(t);
    if (deriv_order > spec.degree()) return 0.0;
    const auto ders = spec.local_derivatives(t, span, deriv_order);
    const std::size_t first = span - static_cast<std::size_t>(spec.degree());
    double acc = 0.0;
    for (std::size_t j = 0; j <= static_cast<std::size_t>(spec.degree()); ++j) {
      acc += coefficients[first + j] * ders[static_cast<std::size_t>(deriv_order)][j];
    }
    return acc;
  }
};

inline std::vector<double> eval_curve(const SmoothedCurve& curve, std::span<const double> grid, int deriv_order = 0) {
  require(curve.coefficients.size() == curve.spec.dimension(), ErrorCode::InvalidArgument,
          "coefficient count does not match basis dimension");
  std::vector<double> out;
  out.reserve(grid.size());
  for (double t : grid) out.push_back(curve(t, deriv_order));
  return out;
}

/// Centers a series on its own mean; times and meta are untouched.
inline PlayerSeries demean(const PlayerSeries& series) {
  require(!series.values.empty(), ErrorCode::InsufficientData, "cannot demean an empty series");
  PlayerSeries out = series;
  const double mean = std::accumulate(series.values.begin(), series.values.end(), 0.0) /
                      static_cast<double>(series.values.size());
  for (auto& v : out.values) v -= mean;
  // second pass removes the rounding residue of the first
  const double resid = std::accumulate(out.values.begin(), out.values.end(), 0.0) /
                       static_cast<double>(out.values.size());
  for (auto& v : out.values) v -= resid;
  return out;
}

struct PenalizedFit {
  std::vector<double> coefficients;
  double sse = 0.0;
  double trace_hat = 0.0;
  std::size_t n = 0;
};

/// GCV(lambda) = n * SSE / (n - tr H)^2, +inf when the smoother is
/// (numerically) interpolating.
inline double gcv_score(double sse, double trace_hat, std::size_t n) {
  const auto nd = static_cast<double>(n);
  const double denom = nd - trace_hat;
  if (denom <= 1e-8 * nd) return std::numeric_limits<double>::infinity();
  return nd * sse / (denom * denom);
}

/// Penalized least squares on one basis. The penalty and its square root are
/// computed once; each fit solves the stacked system [B; sqrt(lambda) R] by
/// column-pivoted QR, which stays accurate for very large lambda.
class PenalizedSmoother {
 public:
  explicit PenalizedSmoother(BasisSpec spec) : spec_(std::move(spec)), penalty_(penalty_matrix(spec_)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(penalty_);
    const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    root_ = d.asDiagonal() * eig.eigenvectors().transpose();
  }

  [[nodiscard]] const BasisSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] const Eigen::MatrixXd& penalty() const noexcept { return penalty_; }

  [[nodiscard]] PenalizedFit fit(std::span<const double> times, std::span<const double> values, double lambda) const {
    require(times.size() == values.size(), ErrorCode::InvalidArgument, "times and values differ in length");
    require(times.size() >= 2, ErrorCode::InsufficientData, "penalized fit needs at least 2 observations");
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidArgument, "lambda must be finite and >= 0");
    const auto n = static_cast<Eigen::Index>(times.size());
    const auto dim = static_cast<Eigen::Index>(spec_.dimension());
    const Eigen::MatrixXd b = design_matrix(spec_, times, 0);
    Eigen::MatrixXd x(n + dim, dim);
    x.topRows(n) = b;
    x.bottomRows(dim) = std::sqrt(lambda) * root_;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + dim);
    for (Eigen::Index i = 0; i < n; ++i) rhs(i) = values[static_cast<std::size_t>(i)];

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-12);
    if (qr.rank() < dim) {
      throw Error(ErrorCode::SingularFit, "penalized system is rank deficient (rank " + std::to_string(qr.rank()) +
                                              " < " + std::to_string(dim) + ")");
    }
    const Eigen::VectorXd beta = qr.solve(rhs);
    const Eigen::VectorXd resid = Eigen::Map<const Eigen::VectorXd>(values.data(), n) - b * beta;

    // tr H = ||B A^{-1/2}||_F^2 with A = X'X = P R' R P'
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(dim, dim).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd bp = b * qr.colsPermutation();
    const Eigen::MatrixXd y = r.transpose().triangularView<Eigen::Lower>().solve(bp.transpose());

    PenalizedFit out;
    out.coefficients.assign(beta.data(), beta.data() + dim);
    out.sse = resid.squaredNorm();
    out.trace_hat = y.squaredNorm();
    out.n = times.size();
    return out;
  }

  [[nodiscard]] SmoothedCurve fit_curve(const PlayerSeries& series, double lambda) const {
    validate(series);
    auto f = fit(series.times, series.values, lambda);
    return SmoothedCurve{spec_, std::move(f.coefficients), lambda, series.id};
  }

 private:
  BasisSpec spec_;
  Eigen::MatrixXd penalty_;
  Eigen::MatrixXd root_;  // penalty = root' * root
};

/// Minimizer of the penalized least-squares criterion for one subject.
inline SmoothedCurve fit_penalized(const BasisSpec& spec, const PlayerSeries& series, double lambda) {
  return PenalizedSmoother(spec).fit_curve(series, lambda);
}

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> lambda_grid;
  std::vector<double> gcv;
};

inline void check_lambda_grid(std::span<const double> grid) {
  require(!grid.empty(), ErrorCode::InvalidArgument, "lambda grid is empty");
  for (double l : grid) require(l > 0.0 && std::isfinite(l), ErrorCode::InvalidArgument, "lambda grid entries must be > 0");
}

/// Argmin of GCV over the grid; ties go to the smaller lambda.
inline LambdaSelection pick_min_gcv(std::span<const double> grid, std::vector<double> scores) {
  LambdaSelection sel{std::numeric_limits<double>::quiet_NaN(), {grid.begin(), grid.end()}, std::move(scores)};
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = sel.gcv[i];
    if (s < best || (s == best && grid[i] < sel.lambda)) {
      best = s;
      sel.lambda = grid[i];
    }
  }
  require(std::isfinite(best), ErrorCode::NumericalError, "GCV is infinite at every grid point");
  return sel;
}

inline LambdaSelection select_lambda_gcv(const PenalizedSmoother& smoother, std::span<const double> times,
                                         std::span<const double> values, std::span<const double> lambda_grid) {
  check_lambda_grid(lambda_grid);
  std::vector<double> scores;
  scores.reserve(lambda_grid.size());
  for (double l : lambda_grid) {
    const auto f = smoother.fit(times, values, l);
    scores.push_back(gcv_score(f.sse, f.trace_hat, f.n));
  }
  return pick_min_gcv(lambda_grid, std::move(scores));
}

inline LambdaSelection select_lambda_gcv(const BasisSpec& spec, const PlayerSeries& series,
                                         std::span<const double> lambda_grid) {
  validate(series);
  return select_lambda_gcv(PenalizedSmoother(spec), series.times, series.values, lambda_grid);
}

/// One lambda for a whole cohort: GCV of the block-diagonal smoother,
/// N * sum_i SSE_i / (N - sum_i tr H_i)^2 with N the pooled observation count.
inline LambdaSelection select_shared_lambda_gcv(const BasisSpec& spec, std::span<const PlayerSeries> cohort,
                                                std::span<const double> lambda_grid) {
  check_lambda_grid(lambda_grid);
  require(!cohort.empty(), ErrorCode::InsufficientData, "empty cohort");
  const PenalizedSmoother smoother(spec);
  std::vector<double> scores;
  scores.reserve(lambda_grid.size());
  for (double l : lambda_grid) {
    double sse = 0.0, trace = 0.0;
    std::size_t n = 0;
    for (const auto& s : cohort) {
      const auto f = smoother.fit(s.times, s.values, l);
      sse += f.sse;
      trace += f.trace_hat;
      n += f.n;
    }
    scores.push_back(gcv_score(sse, trace, n));
  }
  return pick_min_gcv(lambda_grid, std::move(scores));
}

}  // namespace agecurve

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/error.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve {

/// Dense-grid functional PCA of an ensemble of curves.
struct FpcaModel {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<std::vector<double>> eigenfunctions;  // K x G, unit L2 norm
  std::vector<double> eigenvalues;                  // K, descending
  Eigen::MatrixXd scores;                           // N x K
  std::vector<double> varex;                        // K
  std::vector<std::string> subject_ids;
  double total_variance = 0.0;

  [[nodiscard]] std::size_t num_components() const noexcept { return eigenvalues.size(); }
};

/// Eigenpairs of a covariance operator sampled on a grid.
struct FunctionalEigen {
  std::vector<double> eigenvalues;                  // all retained, descending
  std::vector<std::vector<double>> eigenfunctions;  // matching, on the grid
  double total = 0.0;                               // sum of non-negative eigenvalues
};

/// Flip so that the integral is positive; for (near) zero-integral
/// functions, so that the entry of largest magnitude is positive.
inline bool orient_sign(std::vector<double>& psi, std::span<const double> weights) {
  double integral = 0.0;
  for (std::size_t g = 0; g < psi.size(); ++g) integral += weights[g] * psi[g];
  bool flip = false;
  if (std::abs(integral) >= 1e-10) {
    flip = integral < 0.0;
  } else {
    std::size_t arg = 0;
    for (std::size_t g = 1; g < psi.size(); ++g)
      if (std::abs(psi[g]) > std::abs(psi[arg])) arg = g;
    flip = psi[arg] < 0.0;
  }
  if (flip)
    for (auto& v : psi) v = -v;
  return flip;
}

/// Eigen-decomposition of the integral operator with kernel `cov` (G x G on
/// `grid`), using square-root trapezoid weights so that the discrete problem
/// is symmetric. Eigenfunctions come back normalized to unit L2 norm and
/// sign-oriented. Eigenvalues within -tol of zero are clamped; anything more
/// negative is either rejected (strict) or dropped.
inline FunctionalEigen functional_eigen(const Eigen::MatrixXd& cov, std::span<const double> grid, bool strict_negative) {
  const auto g = static_cast<Eigen::Index>(grid.size());
  require(cov.rows() == g && cov.cols() == g, ErrorCode::InvalidArgument, "covariance does not match grid");
  const auto w = trapezoid_weights(grid);
  Eigen::VectorXd sw(g);
  for (Eigen::Index i = 0; i < g; ++i) sw(i) = std::sqrt(w[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd weighted = sw.asDiagonal() * cov * sw.asDiagonal();
  weighted = 0.5 * (weighted + weighted.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(weighted);
  require(eig.info() == Eigen::Success, ErrorCode::NumericalError, "eigen-decomposition failed");

  FunctionalEigen out;
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double top = vals(g - 1);
  const double tol = 1e-10 * std::max(1.0, std::abs(top));
  for (Eigen::Index k = g - 1; k >= 0; --k) {
    double lam = vals(k);
    if (lam < -tol) {
      if (strict_negative) {
        throw Error(ErrorCode::NumericalError, "covariance has eigenvalue " + std::to_string(lam) + " below -tolerance");
      }
      continue;
    }
    lam = std::max(lam, 0.0);
    std::vector<double> psi(static_cast<std::size_t>(g));
    for (Eigen::Index i = 0; i < g; ++i) psi[static_cast<std::size_t>(i)] = eig.eigenvectors()(i, k) / sw(i);
    orient_sign(psi, w);
    out.eigenvalues.push_back(lam);
    out.eigenfunctions.push_back(std::move(psi));
    out.total += lam;
  }
  return out;
}

inline void require_shared_basis(std::span<const SmoothedCurve> curves) {
  require(!curves.empty(), ErrorCode::InsufficientData, "no curves");
  for (const auto& c : curves) {
    if (!(c.spec == curves.front().spec)) {
      throw Error(ErrorCode::BasisMismatch, "curve '" + c.subject_id + "' uses a different basis");
    }
  }
}

/// N x G matrix of curve values on the grid.
inline Eigen::MatrixXd evaluate_ensemble(std::span<const SmoothedCurve> curves, std::span<const double> grid) {
  require_shared_basis(curves);
  const Eigen::MatrixXd b = design_matrix(curves.front().spec, grid);
  Eigen::MatrixXd coef(static_cast<Eigen::Index>(curves.front().spec.dimension()), static_cast<Eigen::Index>(curves.size()));
  for (std::size_t i = 0; i < curves.size(); ++i) {
    require(curves[i].coefficients.size() == curves.front().spec.dimension(), ErrorCode::InvalidArgument,
            "coefficient count does not match basis dimension");
    for (std::size_t j = 0; j < curves[i].coefficients.size(); ++j)
      coef(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = curves[i].coefficients[j];
  }
  return (b * coef).transpose();
}

inline std::vector<double> mean_curve(std::span<const SmoothedCurve> curves, std::span<const double> grid) {
  const Eigen::MatrixXd x = evaluate_ensemble(curves, grid);
  const Eigen::VectorXd m = x.colwise().mean();
  return {m.data(), m.data() + m.size()};
}

/// Pointwise sample variance with the N - 1 divisor.
inline std::vector<double> variance_curve(std::span<const SmoothedCurve> curves, std::span<const double> grid) {
  require(curves.size() >= 2, ErrorCode::InsufficientData, "variance needs at least 2 curves");
  const Eigen::MatrixXd x = evaluate_ensemble(curves, grid);
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::VectorXd v = c.colwise().squaredNorm() / static_cast<double>(x.rows() - 1);
  return {v.data(), v.data() + v.size()};
}

/// Smallest K whose cumulative variance share reaches `target`.
inline std::size_t components_for_varex(std::span<const double> eigenvalues, double total, double target) {
  double acc = 0.0;
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    acc += eigenvalues[k];
    if (total <= 0.0 || acc / total >= target - 1e-12) return k + 1;
  }
  return eigenvalues.size();
}

/// fPCA of curve values already sampled on the grid (rows are subjects).
/// `num_components` = 0 picks the smallest K reaching 99% variance.
inline FpcaModel fpca_from_values(const Eigen::MatrixXd& values, std::span<const double> grid, std::size_t num_components,
                                  double varex_target = 0.99) {
  const auto n = static_cast<std::size_t>(values.rows());
  const std::size_t g = grid.size();
  require(n >= 2, ErrorCode::InsufficientData, "fPCA needs at least 2 curves");
  require(values.cols() == static_cast<Eigen::Index>(g), ErrorCode::InvalidArgument, "values do not match grid");
  require(num_components <= std::min(n - 1, g), ErrorCode::InvalidArgument,
          "num_components must be <= min(N-1, G) = " + std::to_string(std::min(n - 1, g)));

  FpcaModel model;
  model.grid.assign(grid.begin(), grid.end());
  const Eigen::RowVectorXd mu = values.colwise().mean();
  model.mean.assign(mu.data(), mu.data() + mu.size());
  const Eigen::MatrixXd centered = values.rowwise() - mu;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  auto eig = functional_eigen(cov, grid, true);
  model.total_variance = eig.total;

  const std::size_t max_k = std::min({n - 1, g, eig.eigenvalues.size()});
  std::size_t k = num_components;
  if (k == 0) k = std::min(max_k, components_for_varex(eig.eigenvalues, eig.total, varex_target));
  require(k <= eig.eigenvalues.size(), ErrorCode::NumericalError, "fewer usable eigenpairs than requested");

  const auto w = trapezoid_weights(grid);
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) {
    model.eigenvalues.push_back(eig.eigenvalues[c]);
    model.varex.push_back(eig.total > 0.0 ? eig.eigenvalues[c] / eig.total : 0.0);
    for (std::size_t i = 0; i < g; ++i) psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = eig.eigenfunctions[c][i] * w[i];
    model.eigenfunctions.push_back(std::move(eig.eigenfunctions[c]));
  }
  model.scores = centered * psi;  // trapezoid inner products <f_i - mu, psi_k>
  return model;
}

inline FpcaModel fpca_decompose(std::span<const SmoothedCurve> curves, std::span<const double> grid,
                                std::size_t num_components = 0, double varex_target = 0.99) {
  require(curves.size() >= 2, ErrorCode::InsufficientData, "fPCA needs at least 2 curves");
  auto model = fpca_from_values(evaluate_ensemble(curves, grid), grid, num_components, varex_target);
  for (const auto& c : curves) model.subject_ids.push_back(c.subject_id);
  return model;
}

/// mu +/- scale * sqrt(lambda_k) * psi_k, for mode-of-variation displays.
inline std::pair<std::vector<double>, std::vector<double>> mode_of_variation(const FpcaModel& model, std::size_t k,
                                                                             double scale = 2.0) {
  require(k < model.num_components(), ErrorCode::InvalidArgument, "component index out of range");
  std::vector<double> plus(model.grid.size()), minus(model.grid.size());
  const double amp = scale * std::sqrt(model.eigenvalues[k]);
  for (std::size_t g = 0; g < model.grid.size(); ++g) {
    plus[g] = model.mean[g] + amp * model.eigenfunctions[k][g];
    minus[g] = model.mean[g] - amp * model.eigenfunctions[k][g];
  }
  return {plus, minus};
}

}  // namespace agecurve

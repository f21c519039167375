#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/basis.hpp"
#include "agecurve/error.hpp"
#include "agecurve/fpca.hpp"
#include "agecurve/interp.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/random.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve {

struct PaceConfig {
  std::optional<std::pair<double, double>> domain;  // default: range of pooled times
  std::size_t grid_size = 51;
  int mean_degree = 3;
  std::size_t mean_interior_knots = 8;
  std::vector<double> mean_lambda_grid = logspace(1e-6, 1e6, 61);
  std::vector<double> bandwidth_fractions{0.04, 0.06, 0.08, 0.1, 0.13, 0.17, 0.22, 0.3};
  std::size_t cv_folds = 5;
  double central_fraction = 0.8;
  double max_gap_fraction = 0.1;
  double score_noise_floor = 0.01;  // fraction of the mean diagonal variance; 0 disables
  std::size_t j_max = 5;
  std::uint64_t seed = 0;
};

struct PaceDiagnostics {
  double mean_lambda = 0.0;
  double cov_bandwidth = 0.0;
  double noise_bandwidth = 0.0;
  std::vector<double> bandwidths;
  std::vector<double> cov_cv_error;
  double sigma2_raw = 0.0;  // before clamping at 0
  std::size_t raw_pairs = 0;
  std::size_t dropped_eigenvalues = 0;
  std::vector<double> loocv_error;  // index J - 1
  std::size_t regularized_solves = 0;
};

/// Fitted sparse-data fPCA model. Curves live on a dense grid and are read
/// at arbitrary times through monotone cubic interpolation.
class PaceModel {
 public:
  PaceModel() = default;

  PaceModel(std::vector<double> grid, std::vector<double> mean, std::vector<double> eigenvalues,
            std::vector<std::vector<double>> eigenfunctions, double sigma2, std::size_t j_selected = 1)
      : grid_(std::move(grid)),
        mean_(std::move(mean)),
        eigenvalues_(std::move(eigenvalues)),
        eigenfunctions_(std::move(eigenfunctions)),
        sigma2_(sigma2) {
    require(grid_.size() >= 2 && mean_.size() == grid_.size(), ErrorCode::InvalidArgument, "mean does not match grid");
    require(eigenvalues_.size() == eigenfunctions_.size(), ErrorCode::InvalidArgument,
            "eigenvalue and eigenfunction counts differ");
    require(sigma2_ >= 0.0, ErrorCode::InvalidArgument, "sigma2 must be >= 0");
    const auto g = static_cast<Eigen::Index>(grid_.size());
    cov_ = Eigen::MatrixXd::Zero(g, g);
    mean_interp_ = Pchip(grid_, mean_);
    for (std::size_t k = 0; k < eigenvalues_.size(); ++k) {
      require(eigenvalues_[k] >= 0.0, ErrorCode::InvalidArgument, "eigenvalues must be >= 0");
      require(eigenfunctions_[k].size() == grid_.size(), ErrorCode::InvalidArgument, "eigenfunction does not match grid");
      const Eigen::Map<const Eigen::VectorXd> psi(eigenfunctions_[k].data(), g);
      cov_.noalias() += eigenvalues_[k] * psi * psi.transpose();
      psi_interp_.emplace_back(grid_, eigenfunctions_[k]);
    }
    set_j_selected(j_selected);
  }

  [[nodiscard]] const std::vector<double>& grid() const noexcept { return grid_; }
  [[nodiscard]] const std::vector<double>& mean() const noexcept { return mean_; }
  [[nodiscard]] const Eigen::MatrixXd& cov_surface() const noexcept { return cov_; }
  [[nodiscard]] double sigma2() const noexcept { return sigma2_; }
  /// Noise variance used when predicting scores: max(sigma2, floor).
  [[nodiscard]] double score_noise() const noexcept { return std::max(sigma2_, noise_floor_); }
  [[nodiscard]] double noise_floor() const noexcept { return noise_floor_; }
  void set_noise_floor(double floor) {
    require(floor >= 0.0 && std::isfinite(floor), ErrorCode::InvalidArgument, "noise floor must be >= 0");
    noise_floor_ = floor;
  }
  [[nodiscard]] const std::vector<double>& eigenvalues() const noexcept { return eigenvalues_; }
  [[nodiscard]] const std::vector<std::vector<double>>& eigenfunctions() const noexcept { return eigenfunctions_; }
  [[nodiscard]] std::size_t num_components() const noexcept { return eigenvalues_.size(); }
  [[nodiscard]] std::size_t J_selected() const noexcept { return j_selected_; }
  [[nodiscard]] double lo() const noexcept { return grid_.front(); }
  [[nodiscard]] double hi() const noexcept { return grid_.back(); }

  void set_j_selected(std::size_t j) {
    require(num_components() == 0 || (j >= 1 && j <= num_components()), ErrorCode::InvalidArgument,
            "J_selected must lie in 1..K");
    j_selected_ = j;
  }

  [[nodiscard]] double mean_at(double t) const { return mean_interp_(t); }
  [[nodiscard]] double eigenfunction_at(std::size_t k, double t) const { return psi_interp_.at(k)(t); }

  /// G(s, t) off the grid, through the interpolated eigenfunctions.
  [[nodiscard]] double cov_at(double s, double t) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < num_components(); ++k) acc += eigenvalues_[k] * psi_interp_[k](s) * psi_interp_[k](t);
    return acc;
  }

  PaceDiagnostics diagnostics;

 private:
  std::vector<double> grid_, mean_, eigenvalues_;
  std::vector<std::vector<double>> eigenfunctions_;
  double sigma2_ = 0.0;
  double noise_floor_ = 0.0;
  std::size_t j_selected_ = 1;
  Eigen::MatrixXd cov_;
  Pchip mean_interp_;
  std::vector<Pchip> psi_interp_;
};

struct ScoreResult {
  std::vector<double> scores;
  bool regularized = false;
};

/// Best linear predictors lambda_k psi_k' Sigma^{-1} (y - mu) of the first J
/// scores, with Sigma = [G_J(t_j, t_l)] + sigma2 I at the subject's times and
/// G_J the covariance carried by the first J components.
inline ScoreResult conditional_scores_detailed(const PaceModel& model, std::span<const double> times,
                                               std::span<const double> values, std::size_t j) {
  require(j >= 1 && j <= model.num_components(), ErrorCode::InvalidArgument, "J must lie in 1..K");
  require(times.size() == values.size(), ErrorCode::InvalidArgument, "times and values differ in length");
  require(!times.empty(), ErrorCode::InsufficientData, "no observations");
  const auto n = static_cast<Eigen::Index>(times.size());
  const auto kk = static_cast<Eigen::Index>(j);

  Eigen::MatrixXd psi(n, kk);
  Eigen::VectorXd resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = times[static_cast<std::size_t>(i)];
    resid(i) = values[static_cast<std::size_t>(i)] - model.mean_at(t);
    for (Eigen::Index k = 0; k < kk; ++k) psi(i, k) = model.eigenfunction_at(static_cast<std::size_t>(k), t);
  }
  const Eigen::Map<const Eigen::VectorXd> lam(model.eigenvalues().data(), kk);
  Eigen::MatrixXd sigma = psi * lam.asDiagonal() * psi.transpose();
  sigma.diagonal().array() += model.score_noise();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  ScoreResult out;
  out.scores.assign(j, 0.0);
  const double trace = sigma.trace();
  if (!(trace > 0.0)) {
    out.regularized = true;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma, Eigen::EigenvaluesOnly);
  const double emin = eig.eigenvalues()(0), emax = eig.eigenvalues()(n - 1);
  if (!(emin > 0.0) || emax / emin > 1e12) {
    sigma.diagonal().array() += 1e-8 * trace / static_cast<double>(n);
    out.regularized = true;
  }
  const Eigen::VectorXd x = sigma.ldlt().solve(resid);
  for (std::size_t k = 0; k < j; ++k) {
    out.scores[k] = model.eigenvalues()[k] * psi.col(static_cast<Eigen::Index>(k)).dot(x);
  }
  return out;
}

inline std::vector<double> conditional_scores(const PaceModel& model, const PlayerSeries& series, std::size_t j) {
  validate(series);
  return conditional_scores_detailed(model, series.times, series.values, j).scores;
}

/// mu(t) + sum_k scores_k psi_k(t) anywhere in the model domain.
inline std::vector<double> reconstruct(const PaceModel& model, std::span<const double> scores, std::span<const double> grid) {
  require(scores.size() <= model.num_components(), ErrorCode::InvalidArgument, "more scores than components");
  std::vector<double> out(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double v = model.mean_at(grid[g]);
    for (std::size_t k = 0; k < scores.size(); ++k) v += scores[k] * model.eigenfunction_at(k, grid[g]);
    out[g] = v;
  }
  return out;
}

/// Total squared leave-one-observation-out prediction error for J = 1..J_max.
inline std::vector<double> loocv_prediction_errors(const PaceModel& model, std::span<const PlayerSeries> data,
                                                   std::size_t j_max, std::size_t* regularized = nullptr) {
  require(j_max >= 1 && j_max <= model.num_components(), ErrorCode::InvalidArgument, "J_max must lie in 1..K");
  std::vector<double> err(j_max, 0.0);
  bool any = false;
  std::vector<double> t, y;
  for (const auto& s : data) {
    validate(s);
    if (s.size() < 2) continue;
    any = true;
    for (std::size_t out = 0; out < s.size(); ++out) {
      t.clear();
      y.clear();
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == out) continue;
        t.push_back(s.times[i]);
        y.push_back(s.values[i]);
      }
      const double mu = model.mean_at(s.times[out]);
      for (std::size_t jj = 1; jj <= j_max; ++jj) {
        const auto res = conditional_scores_detailed(model, t, y, jj);
        if (res.regularized && regularized) ++*regularized;
        double pred = mu;
        for (std::size_t k = 0; k < jj; ++k) pred += res.scores[k] * model.eigenfunction_at(k, s.times[out]);
        const double e = s.values[out] - pred;
        err[jj - 1] += e * e;
      }
    }
  }
  require(any, ErrorCode::CVUndefined, "every subject has a single observation");
  return err;
}

/// Argmin over J of the LOO-CV error; ties go to the smaller J.
inline std::size_t pick_min_loocv(std::span<const double> err) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < err.size(); ++k)
    if (err[k] < err[best]) best = k;
  return best + 1;
}

inline std::size_t select_J_loocv(const PaceModel& model, std::span<const PlayerSeries> data, std::size_t j_max) {
  return pick_min_loocv(loocv_prediction_errors(model, data, j_max));
}

namespace detail {

/// Kernel-weighted local polynomial smoothing of binned responses on a
/// grid, Gaussian kernel of bandwidth h. Degenerate local systems give NaN.
class LocalPoly {
 public:
  LocalPoly(std::span<const double> grid, double h) {
    const auto g = static_cast<Eigen::Index>(grid.size());
    a_.assign(5, Eigen::MatrixXd(g, g));
    for (Eigen::Index r = 0; r < g; ++r) {
      for (Eigen::Index c = 0; c < g; ++c) {
        const double d = grid[static_cast<std::size_t>(c)] - grid[static_cast<std::size_t>(r)];
        double w = std::exp(-0.5 * (d / h) * (d / h));
        for (auto& m : a_) {
          m(r, c) = w;
          w *= d;
        }
      }
    }
  }

  /// 1-D fit of degree 1 or 2 at every grid point.
  [[nodiscard]] Eigen::VectorXd curve(const Eigen::VectorXd& count, const Eigen::VectorXd& sum, int degree) const {
    const int p = degree + 1;
    std::vector<Eigen::VectorXd> s, t;
    for (int k = 0; k <= 2 * degree; ++k) s.push_back(a_[static_cast<std::size_t>(k)] * count);
    for (int k = 0; k <= degree; ++k) t.push_back(a_[static_cast<std::size_t>(k)] * sum);
    Eigen::VectorXd out(count.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      Eigen::MatrixXd m(p, p);
      Eigen::VectorXd rhs(p);
      for (int r = 0; r < p; ++r) {
        rhs(r) = t[static_cast<std::size_t>(r)](i);
        for (int c = 0; c < p; ++c) m(r, c) = s[static_cast<std::size_t>(r + c)](i);
      }
      out(i) = solve_intercept(m, rhs);
    }
    return out;
  }

  /// 2-D local linear fit at every grid node.
  [[nodiscard]] Eigen::MatrixXd surface(const Eigen::MatrixXd& count, const Eigen::MatrixXd& sum) const {
    const Eigen::MatrixXd c0 = count * a_[0].transpose(), c1 = count * a_[1].transpose(), c2 = count * a_[2].transpose();
    const Eigen::MatrixXd s00 = a_[0] * c0, s10 = a_[1] * c0, s01 = a_[0] * c1;
    const Eigen::MatrixXd s20 = a_[2] * c0, s02 = a_[0] * c2, s11 = a_[1] * c1;
    const Eigen::MatrixXd y0 = sum * a_[0].transpose();
    const Eigen::MatrixXd t0 = a_[0] * y0, t1 = a_[1] * y0, t2 = a_[0] * (sum * a_[1].transpose());
    Eigen::MatrixXd out(count.rows(), count.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        Eigen::MatrixXd m(3, 3);
        m << s00(r, c), s10(r, c), s01(r, c), s10(r, c), s20(r, c), s11(r, c), s01(r, c), s11(r, c), s02(r, c);
        out(r, c) = solve_intercept(m, Eigen::Vector3d(t0(r, c), t1(r, c), t2(r, c)));
      }
    }
    return out;
  }

  /// 2-D local quadratic fit evaluated on the diagonal nodes (t, t) only.
  [[nodiscard]] Eigen::VectorXd diagonal_quadratic(const Eigen::MatrixXd& count, const Eigen::MatrixXd& sum) const {
    static constexpr int px[6] = {0, 1, 0, 2, 1, 0};
    static constexpr int py[6] = {0, 0, 1, 0, 1, 2};
    const Eigen::Index g = count.rows();
    // moment (p, q) at node i: row i of A_p C A_q'
    std::vector<Eigen::MatrixXd> ac;
    for (int p = 0; p <= 4; ++p) ac.push_back(a_[static_cast<std::size_t>(p)] * count);
    std::vector<Eigen::MatrixXd> as;
    for (int p = 0; p <= 2; ++p) as.push_back(a_[static_cast<std::size_t>(p)] * sum);
    Eigen::VectorXd out(g);
    for (Eigen::Index i = 0; i < g; ++i) {
      Eigen::MatrixXd m(6, 6);
      Eigen::VectorXd rhs(6);
      for (int r = 0; r < 6; ++r) {
        rhs(r) = as[static_cast<std::size_t>(px[r])].row(i).dot(a_[static_cast<std::size_t>(py[r])].row(i));
        for (int c = 0; c < 6; ++c) {
          m(r, c) = ac[static_cast<std::size_t>(px[r] + px[c])].row(i).dot(a_[static_cast<std::size_t>(py[r] + py[c])].row(i));
        }
      }
      out(i) = solve_intercept(m, rhs);
    }
    return out;
  }

 private:
  static double solve_intercept(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
    if (!(m(0, 0) > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    // unit-diagonal scaling keeps the conditioning check meaningful
    const Eigen::VectorXd d = m.diagonal().cwiseMax(std::numeric_limits<double>::min()).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd ms = d.asDiagonal() * m * d.asDiagonal();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(ms);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-12) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return d(0) * ldlt.solve(d.asDiagonal() * rhs)(0);
  }

  std::vector<Eigen::MatrixXd> a_;  // a_[p](r, c) = K(x_c - x_r) (x_c - x_r)^p
};

struct Bins2 {
  Eigen::MatrixXd count, sum, sumsq;
  explicit Bins2(Eigen::Index g) : count(Eigen::MatrixXd::Zero(g, g)), sum(count), sumsq(count) {}
};

struct Bins1 {
  Eigen::VectorXd count, sum;
  explicit Bins1(Eigen::Index g) : count(Eigen::VectorXd::Zero(g)), sum(count) {}
};

inline Eigen::Index nearest_index(std::span<const double> grid, double t) {
  auto it = std::lower_bound(grid.begin(), grid.end(), t);
  if (it == grid.end()) return static_cast<Eigen::Index>(grid.size()) - 1;
  if (it != grid.begin() && (t - *(it - 1)) <= (*it - t)) --it;
  return static_cast<Eigen::Index>(it - grid.begin());
}

// squared error of held-out raw covariances against a surface, from bin sums
inline double held_out_error(const Eigen::MatrixXd& pred, const Bins2& bins) {
  double err = 0.0;
  for (Eigen::Index i = 0; i < bins.count.size(); ++i) {
    const double c = bins.count.data()[i];
    if (c == 0.0) continue;
    const double p = pred.data()[i];
    if (!std::isfinite(p)) return std::numeric_limits<double>::infinity();
    err += bins.sumsq.data()[i] - 2.0 * p * bins.sum.data()[i] + c * p * p;
  }
  return err;
}

// argmin with ties to the earlier (smaller) candidate
inline std::size_t argmin_finite(std::span<const double> v) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i]) && (best == v.size() || v[i] < v[best])) best = i;
  return best;
}

}  // namespace detail

inline void check_pace_config(const PaceConfig& c) {
  require(c.grid_size >= 3, ErrorCode::InvalidArgument, "grid_size must be >= 3");
  require(!c.bandwidth_fractions.empty(), ErrorCode::InvalidArgument, "bandwidth grid is empty");
  for (double h : c.bandwidth_fractions)
    require(h > 0.0 && std::isfinite(h), ErrorCode::InvalidArgument, "bandwidth fractions must be > 0");
  require(c.cv_folds >= 2, ErrorCode::InvalidArgument, "cv_folds must be >= 2");
  require(c.central_fraction > 0.0 && c.central_fraction <= 1.0, ErrorCode::InvalidArgument,
          "central_fraction must lie in (0, 1]");
  require(c.max_gap_fraction > 0.0, ErrorCode::InvalidArgument, "max_gap_fraction must be > 0");
  require(c.score_noise_floor >= 0.0, ErrorCode::InvalidArgument, "score_noise_floor must be >= 0");
  require(c.j_max >= 1, ErrorCode::InvalidArgument, "j_max must be >= 1");
  if (c.domain) require(c.domain->second > c.domain->first, ErrorCode::InvalidArgument, "domain must have lo < hi");
}

inline PaceModel fit_pace(std::span<const PlayerSeries> data, const PaceConfig& config = {}) {
  check_pace_config(config);
  require(data.size() >= 2, ErrorCode::InsufficientData, "PACE needs at least 2 subjects");

  std::vector<double> pooled_t, pooled_y;
  for (const auto& s : data) {
    validate(s);
    pooled_t.insert(pooled_t.end(), s.times.begin(), s.times.end());
    pooled_y.insert(pooled_y.end(), s.values.begin(), s.values.end());
  }
  const auto [tmin, tmax] = std::minmax_element(pooled_t.begin(), pooled_t.end());
  const std::pair<double, double> dom = config.domain.value_or(std::pair{*tmin, *tmax});
  require(dom.second > dom.first, ErrorCode::SparseCoverage, "pooled times span a single point");
  const double len = dom.second - dom.first;
  const double eps = 1e-12 * len;
  require(*tmin >= dom.first - eps && *tmax <= dom.second + eps, ErrorCode::OutOfDomain,
          "observation times fall outside the analysis domain");

  std::vector<double> distinct(pooled_t);
  distinct.push_back(dom.first);
  distinct.push_back(dom.second);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double max_gap = 0.0;
  for (std::size_t i = 1; i < distinct.size(); ++i) max_gap = std::max(max_gap, distinct[i] - distinct[i - 1]);
  if (!(max_gap < config.max_gap_fraction * len)) {
    throw Error(ErrorCode::SparseCoverage, "largest gap between pooled times is " + std::to_string(max_gap / len) +
                                               " of the domain (limit " + std::to_string(config.max_gap_fraction) + ")");
  }
  const bool has_pairs = std::any_of(data.begin(), data.end(), [](const PlayerSeries& s) { return s.size() >= 2; });
  require(has_pairs, ErrorCode::CovarianceUnidentified, "no subject has two or more observations");

  PaceDiagnostics diag;
  const auto grid = linspace(dom.first, dom.second, config.grid_size);
  const auto g = static_cast<Eigen::Index>(grid.size());

  // pooled mean
  const PenalizedSmoother smoother(make_uniform_basis(config.mean_degree, config.mean_interior_knots, dom));
  const auto sel = select_lambda_gcv(smoother, pooled_t, pooled_y, config.mean_lambda_grid);
  diag.mean_lambda = sel.lambda;
  const SmoothedCurve mu{smoother.spec(), smoother.fit(pooled_t, pooled_y, sel.lambda).coefficients, sel.lambda, "mean"};
  const auto mean_grid = eval_curve(mu, grid);

  // subjects with pairs, assigned to CV folds in seeded order
  std::vector<std::size_t> paired;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].size() >= 2) paired.push_back(i);
  Rng fold_rng(derive_seed(config.seed, 0x70616365u));
  fold_rng.shuffle(std::span<std::size_t>(paired));
  const std::size_t folds = std::min(config.cv_folds, paired.size());

  // raw covariances binned to the nearest grid node; a subject's pairs
  // carry weight 1/(n_i - 1) so its total weight matches the diagonal
  std::vector<detail::Bins2> off(folds, detail::Bins2(g));
  detail::Bins2 off_all(g);
  detail::Bins1 dia(g);
  for (std::size_t p = 0; p < paired.size(); ++p) {
    const auto& s = data[paired[p]];
    auto& ob = off[p % folds];
    std::vector<double> r(s.size());
    std::vector<Eigen::Index> idx(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
      r[j] = s.values[j] - mu(s.times[j]);
      idx[j] = detail::nearest_index(grid, s.times[j]);
      dia.count(idx[j]) += 1.0;
      dia.sum(idx[j]) += r[j] * r[j];
    }
    const double w = 1.0 / static_cast<double>(s.size() - 1);
    for (std::size_t j = 0; j < s.size(); ++j) {
      for (std::size_t l = 0; l < s.size(); ++l) {
        if (j == l) continue;
        const double c = r[j] * r[l];
        ob.count(idx[j], idx[l]) += w;
        ob.sum(idx[j], idx[l]) += w * c;
        ob.sumsq(idx[j], idx[l]) += w * c * c;
        ++diag.raw_pairs;
      }
    }
  }
  for (const auto& ob : off) {
    off_all.count += ob.count;
    off_all.sum += ob.sum;
  }

  // surface bandwidth by subject-level K-fold CV
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> surfaces;
  for (double frac : config.bandwidth_fractions) {
    const double h = frac * len;
    diag.bandwidths.push_back(h);
    const detail::LocalPoly lp(grid, h);
    surfaces.push_back(lp.surface(off_all.count, off_all.sum));
    double err = surfaces.back().allFinite() ? 0.0 : inf;
    for (std::size_t f = 0; f < folds && folds >= 2 && std::isfinite(err); ++f) {
      const Eigen::MatrixXd pred = lp.surface(off_all.count - off[f].count, off_all.sum - off[f].sum);
      err += detail::held_out_error(pred, off[f]);
    }
    diag.cov_cv_error.push_back(err);
  }
  std::size_t hc = detail::argmin_finite(diag.cov_cv_error);
  if (folds < 2) {
    // nothing to cross-validate with a single paired subject: widest usable bandwidth
    for (std::size_t i = 0; i < surfaces.size(); ++i)
      if (std::isfinite(diag.cov_cv_error[i])) hc = i;
  }
  require(hc < diag.bandwidths.size(), ErrorCode::SparseCoverage,
          "covariance smoother is undefined for every candidate bandwidth");
  diag.cov_bandwidth = diag.bandwidths[hc];
  Eigen::MatrixXd ghat = surfaces[hc];
  ghat = 0.5 * (ghat + ghat.transpose()).eval();

  // noise variance: local quadratic diagonal smooth minus local quadratic
  // G(t, t), same bandwidth, averaged over the central part of the domain;
  // widen the bandwidth if the quadratic fits are undefined there
  const double margin = 0.5 * (1.0 - config.central_fraction) * len;
  double acc = std::numeric_limits<double>::quiet_NaN();
  std::size_t cnt = 0;
  for (std::size_t hi = hc; hi < diag.bandwidths.size() && !std::isfinite(acc); ++hi) {
    const detail::LocalPoly lq(grid, diag.bandwidths[hi]);
    const Eigen::VectorXd vhat = lq.curve(dia.count, dia.sum, 2);
    const Eigen::VectorXd gdiag = lq.diagonal_quadratic(off_all.count, off_all.sum);
    acc = 0.0;
    cnt = 0;
    for (Eigen::Index i = 0; i < g; ++i) {
      const double t = grid[static_cast<std::size_t>(i)];
      if (t < dom.first + margin - eps || t > dom.second - margin + eps) continue;
      acc += vhat(i) - gdiag(i);
      ++cnt;
    }
    diag.noise_bandwidth = diag.bandwidths[hi];
  }
  require(cnt > 0 && std::isfinite(acc), ErrorCode::SparseCoverage, "noise variance is undefined on the central grid");
  diag.sigma2_raw = acc / static_cast<double>(cnt);
  const double sigma2 = std::max(0.0, diag.sigma2_raw);

  auto eig = functional_eigen(ghat, grid, false);
  diag.dropped_eigenvalues = static_cast<std::size_t>(g) - eig.eigenvalues.size();
  require(!eig.eigenvalues.empty(), ErrorCode::NumericalError, "covariance surface is negative definite");
  // the leading pair is always kept, so a zero surface yields K = 1 with eigenvalue 0
  const double cut = 1e-10 * eig.eigenvalues.front();
  std::size_t k = 1;
  while (k < eig.eigenvalues.size() && eig.eigenvalues[k] > cut) ++k;
  eig.eigenvalues.resize(k);
  eig.eigenfunctions.resize(k);

  const double total = std::accumulate(eig.eigenvalues.begin(), eig.eigenvalues.end(), 0.0);
  PaceModel model(grid, mean_grid, std::move(eig.eigenvalues), std::move(eig.eigenfunctions), sigma2, 1);
  model.set_noise_floor(config.score_noise_floor * total / len);
  const std::size_t jmax = std::min(config.j_max, model.num_components());
  diag.loocv_error = loocv_prediction_errors(model, data, jmax, &diag.regularized_solves);
  model.set_j_selected(pick_min_loocv(diag.loocv_error));
  model.diagnostics = std::move(diag);
  return model;
}

/// N x J conditional scores for a cohort under a fitted model.
inline Eigen::MatrixXd pace_scores(const PaceModel& model, std::span<const PlayerSeries> data, std::size_t j,
                                   std::size_t* regularized = nullptr) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(j));
  for (std::size_t i = 0; i < data.size(); ++i) {
    validate(data[i]);
    const auto res = conditional_scores_detailed(model, data[i].times, data[i].values, j);
    if (res.regularized && regularized) ++*regularized;
    for (std::size_t k = 0; k < j; ++k) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = res.scores[k];
  }
  return out;
}

}  // namespace agecurve

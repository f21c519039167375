#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/error.hpp"
#include "agecurve/random.hpp"
#include "agecurve/special.hpp"

namespace agecurve {

enum class Alternative { TwoSided, Greater, Less };

constexpr std::string_view to_string(Alternative a) {
  switch (a) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Greater: return "greater";
    case Alternative::Less: return "less";
  }
  return "two-sided";
}

inline Alternative parse_alternative(std::string_view s) {
  if (s == "two-sided") return Alternative::TwoSided;
  if (s == "greater") return Alternative::Greater;
  if (s == "less") return Alternative::Less;
  throw Error(ErrorCode::InvalidArgument, "alternative must be two-sided, greater or less, got '" + std::string(s) + "'");
}

struct TestResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  Alternative alternative = Alternative::TwoSided;
};

struct PermTestOptions {
  std::size_t replications = 5000;
  std::uint64_t seed = 0;
  bool strict = false;              // count T' > T instead of T' >= T
  std::size_t exact_threshold = 10;  // enumerate all splits when N <= this
};

struct PermTestResult {
  double observed_T = 0.0;
  std::vector<double> null_sample;
  double p_value = 1.0;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  bool exact = false;
  bool strict = false;
};

/// |mean(P) - mean(Q)|.
inline double statistic_T(std::span<const double> p, std::span<const double> q) {
  require(!p.empty() && !q.empty(), ErrorCode::EmptyGroup, "both groups need at least one score");
  const double mp = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  const double mq = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
  return std::abs(mp - mq);
}

/// Euclidean norm of the difference of group mean score vectors (rows are subjects).
inline double statistic_T(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
  require(p.rows() > 0 && q.rows() > 0, ErrorCode::EmptyGroup, "both groups need at least one score");
  require(p.cols() == q.cols(), ErrorCode::InvalidArgument, "score dimensions differ");
  return (p.colwise().mean() - q.colwise().mean()).norm();
}

namespace detail {

// Mean difference of the first n rows against the rest, for a given order.
inline double split_statistic(const Eigen::MatrixXd& pool, std::span<const std::size_t> order, std::size_t n) {
  const auto d = pool.cols();
  Eigen::RowVectorXd sp = Eigen::RowVectorXd::Zero(d), sq = Eigen::RowVectorXd::Zero(d);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n ? sp : sq) += pool.row(static_cast<Eigen::Index>(order[i]));
  }
  const auto m = order.size() - n;
  return (sp / static_cast<double>(n) - sq / static_cast<double>(m)).norm();
}

inline std::uint64_t binomial(std::size_t n, std::size_t k) {
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace detail

/// Two-group permutation test on the mean-difference statistic. Replication
/// r relabels with its own generator seeded from (seed, r), so the result
/// does not depend on evaluation order.
inline PermTestResult permutation_test(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q, const PermTestOptions& opt) {
  require(opt.replications >= 1, ErrorCode::InvalidArgument, "replications must be >= 1");
  const double observed = statistic_T(p, q);
  const auto n = static_cast<std::size_t>(p.rows()), m = static_cast<std::size_t>(q.rows()), total = n + m;
  Eigen::MatrixXd pool(static_cast<Eigen::Index>(total), p.cols());
  pool << p, q;

  // ties are judged relative to the spread of the pooled scores
  const double spread = (pool.colwise().maxCoeff() - pool.colwise().minCoeff()).norm();
  const double tol = 1e-10 * spread;
  auto exceeds = [&](double t) { return opt.strict ? t > observed + tol : t >= observed - tol; };

  PermTestResult out;
  out.observed_T = observed;
  out.seed = opt.seed;
  out.strict = opt.strict;

  std::vector<std::size_t> order(total);
  if (total <= opt.exact_threshold) {
    // every size-n subset of the pool is an equally likely relabeling
    out.exact = true;
    out.null_sample.reserve(detail::binomial(total, n));
    std::vector<bool> chosen(total, false);
    std::fill(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(n), true);
    do {
      std::size_t a = 0, b = n;
      for (std::size_t i = 0; i < total; ++i) order[chosen[i] ? a++ : b++] = i;
      out.null_sample.push_back(detail::split_statistic(pool, order, n));
    } while (std::prev_permutation(chosen.begin(), chosen.end()));
  } else {
    out.null_sample.reserve(opt.replications);
    for (std::size_t r = 0; r < opt.replications; ++r) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(opt.seed, r));
      rng.shuffle(std::span<std::size_t>(order));
      out.null_sample.push_back(detail::split_statistic(pool, order, n));
    }
  }
  out.replications = out.null_sample.size();
  const auto hits = std::count_if(out.null_sample.begin(), out.null_sample.end(), exceeds);
  out.p_value = static_cast<double>(hits) / static_cast<double>(out.replications);
  return out;
}

inline PermTestResult permutation_test(std::span<const double> p, std::span<const double> q, const PermTestOptions& opt) {
  require(!p.empty() && !q.empty(), ErrorCode::EmptyGroup, "both groups need at least one score");
  const Eigen::MatrixXd mp = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  const Eigen::MatrixXd mq = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  return permutation_test(mp, mq, opt);
}

namespace detail {

inline double tail_p(double stat, double df, Alternative alt) {
  switch (alt) {
    case Alternative::Greater: return student_t_upper(stat, df);
    case Alternative::Less: return student_t_upper(-stat, df);
    case Alternative::TwoSided: return std::min(1.0, 2.0 * student_t_upper(std::abs(stat), df));
  }
  return 1.0;
}

inline std::pair<double, double> mean_var(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, ss / (n - 1.0)};
}

}  // namespace detail

/// Welch two-sample t-test of mean(a) - mean(b).
inline TestResult t_test(std::span<const double> a, std::span<const double> b, Alternative alt = Alternative::TwoSided) {
  require(a.size() >= 2 && b.size() >= 2, ErrorCode::InsufficientData, "t-test needs at least two values per group");
  const auto [ma, va] = detail::mean_var(a);
  const auto [mb, vb] = detail::mean_var(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb, se2 = sa + sb;
  TestResult r;
  r.alternative = alt;
  if (se2 == 0.0) {
    // both groups constant: no spread to scale the difference by
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.statistic = 0.0;
      r.p_value = alt == Alternative::TwoSided ? 1.0 : 0.5;
    } else {
      r.statistic = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = detail::tail_p(r.statistic, r.df, alt);
    }
    return r;
  }
  r.statistic = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p_value = detail::tail_p(r.statistic, r.df, alt);
  return r;
}

/// Pearson chi-square test of independence on an R x C count table.
inline TestResult chi_square_independence(const Eigen::MatrixXd& table) {
  require(table.rows() >= 2 && table.cols() >= 2, ErrorCode::InvalidArgument, "table must be at least 2 x 2");
  require((table.array() >= 0.0).all() && table.allFinite(), ErrorCode::InvalidArgument, "counts must be non-negative");
  const Eigen::VectorXd rows = table.rowwise().sum();
  const Eigen::RowVectorXd cols = table.colwise().sum();
  require((rows.array() > 0.0).all() && (cols.array() > 0.0).all(), ErrorCode::ZeroMargin,
          "every row and column sum must be positive");
  const double total = rows.sum();
  double stat = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) {
      const double e = rows(i) * cols(j) / total;
      stat += (table(i, j) - e) * (table(i, j) - e) / e;
    }
  }
  TestResult r;
  r.statistic = stat;
  r.df = static_cast<double>((table.rows() - 1) * (table.cols() - 1));
  r.p_value = chi_square_upper(stat, r.df);
  return r;
}

inline double bonferroni(double alpha, std::size_t m) {
  require(m >= 1, ErrorCode::InvalidArgument, "Bonferroni needs m >= 1");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  return alpha / static_cast<double>(m);
}

}  // namespace agecurve

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "agecurve/inference.hpp"
#include "agecurve/random.hpp"
#include "agecurve/special.hpp"

using namespace agecurve;

namespace {

PermTestOptions monte_carlo(std::size_t b, std::uint64_t seed) {
  PermTestOptions o;
  o.replications = b;
  o.seed = seed;
  o.exact_threshold = 0;
  return o;
}

// exhaustive p over all N! orderings of the pooled values
double enumeration_p(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> pool(p);
  pool.insert(pool.end(), q.begin(), q.end());
  const auto mean = [](auto first, auto last) { return std::accumulate(first, last, 0.0) / std::distance(first, last); };
  const double t = std::abs(mean(p.begin(), p.end()) - mean(q.begin(), q.end()));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t hits = 0, total = 0;
  do {
    double sp = 0, sq = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < p.size() ? sp : sq) += pool[idx[i]];
    const double tp = std::abs(sp / p.size() - sq / q.size());
    hits += tp >= t - 1e-9;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<double> normals(Rng& rng, std::size_t n, double mean = 0.0) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal(mean, 1.0));
  return out;
}

}  // namespace

TEST(StatisticT, Examples) {
  EXPECT_DOUBLE_EQ(statistic_T(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5}), 2.5);
  const std::vector<double> a{0.3, -1.2, 4.0};
  EXPECT_DOUBLE_EQ(statistic_T(a, a), 0.0);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto p = normals(rng, 7), q = normals(rng, 4, 1.0);
    EXPECT_DOUBLE_EQ(statistic_T(p, q), statistic_T(q, p));
  }
  try {
    (void)statistic_T(std::vector<double>{}, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGroup);
  }
}

TEST(PermutationTest, DegeneratePool) {
  const std::vector<double> p{2, 2, 2, 2, 2, 2}, q{2, 2, 2, 2, 2, 2, 2};
  const auto r = permutation_test(p, q, monte_carlo(500, 1));
  EXPECT_EQ(r.observed_T, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.null_sample.size(), 500u);
  for (double t : r.null_sample) EXPECT_NEAR(t, 0.0, 1e-12);
}

TEST(PermutationTest, MonteCarloMatchesEnumeration) {
  const std::vector<double> p{0, 0}, q{10, 10};
  const double exact = enumeration_p(p, q);
  EXPECT_NEAR(exact, 8.0 / 24.0, 1e-12);
  EXPECT_NEAR(permutation_test(p, q, monte_carlo(100000, 42)).p_value, exact, 0.01);

  Rng rng(9);
  for (auto [n, m] : {std::pair{3, 5}, std::pair{4, 4}, std::pair{2, 5}}) {
    const auto a = normals(rng, n, 0.8), b = normals(rng, m);
    EXPECT_NEAR(permutation_test(a, b, monte_carlo(100000, 7)).p_value, enumeration_p(a, b), 0.01);
  }
}

TEST(PermutationTest, ExactModeEqualsEnumeration) {
  Rng rng(5);
  const auto a = normals(rng, 3, 1.0), b = normals(rng, 5);
  PermTestOptions o;
  const auto r = permutation_test(a, b, o);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.replications, 56u);
  EXPECT_NEAR(r.p_value, enumeration_p(a, b), 1e-12);
}

TEST(PermutationTest, PValueOnTheReplicationLattice) {
  Rng rng(13);
  const auto a = normals(rng, 20, 0.3), b = normals(rng, 25);
  for (std::size_t b_reps : {1u, 7u, 333u}) {
    const auto r = permutation_test(a, b, monte_carlo(b_reps, 2));
    EXPECT_EQ(r.null_sample.size(), b_reps);
    const double k = r.p_value * static_cast<double>(b_reps);
    EXPECT_DOUBLE_EQ(k, std::round(k));
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
  }
}

TEST(PermutationTest, AffineInvariance) {
  Rng rng(21);
  const auto a = normals(rng, 15, 0.5), b = normals(rng, 18);
  const auto base = permutation_test(a, b, monte_carlo(2000, 99));
  for (auto [scale, shift] : {std::pair{3.5, -2.0}, std::pair{0.01, 100.0}, std::pair{1e4, 7.0}}) {
    std::vector<double> a2, b2;
    for (double v : a) a2.push_back(scale * v + shift);
    for (double v : b) b2.push_back(scale * v + shift);
    EXPECT_EQ(permutation_test(a2, b2, monte_carlo(2000, 99)).p_value, base.p_value);
  }
  // atoms: ties between T' and T must survive the transform
  const std::vector<double> p{0, 0, 10}, q{10, 0, 10, 0};
  const auto tied = permutation_test(p, q, monte_carlo(3000, 4));
  std::vector<double> p2, q2;
  for (double v : p) p2.push_back(0.3 * v - 1.7);
  for (double v : q) q2.push_back(0.3 * v - 1.7);
  EXPECT_EQ(permutation_test(p2, q2, monte_carlo(3000, 4)).p_value, tied.p_value);
}

TEST(PermutationTest, DeterministicGivenSeed) {
  Rng rng(1);
  const auto a = normals(rng, 12), b = normals(rng, 12);
  const auto r1 = permutation_test(a, b, monte_carlo(1000, 5));
  const auto r2 = permutation_test(a, b, monte_carlo(1000, 5));
  const auto r3 = permutation_test(a, b, monte_carlo(1000, 6));
  EXPECT_EQ(r1.null_sample, r2.null_sample);
  EXPECT_EQ(r1.p_value, r2.p_value);
  EXPECT_NE(r1.null_sample, r3.null_sample);
}

TEST(PermutationTest, StrictModeCountsFewer) {
  const std::vector<double> p{0, 0}, q{10, 10};
  auto o = monte_carlo(20000, 3);
  const double ge = permutation_test(p, q, o).p_value;
  o.strict = true;
  const double gt = permutation_test(p, q, o).p_value;
  EXPECT_NEAR(ge, 1.0 / 3.0, 0.02);
  EXPECT_EQ(gt, 0.0);
}

TEST(PermutationTest, TypeOneLevel) {
  std::size_t rejections = 0;
  constexpr std::size_t datasets = 500;
  for (std::size_t d = 0; d < datasets; ++d) {
    Rng rng(derive_seed(2024, d));
    const auto a = normals(rng, 50), b = normals(rng, 50);
    rejections += permutation_test(a, b, monte_carlo(1000, derive_seed(77, d))).p_value < 0.05;
  }
  const double frac = static_cast<double>(rejections) / datasets;
  EXPECT_GE(frac, 0.03);
  EXPECT_LE(frac, 0.08);
}

TEST(PermutationTest, MultiComponentStatistic) {
  Eigen::MatrixXd p(3, 2), q(2, 2);
  p << 1, 0, 2, 0, 3, 0;
  q << 1, 3, 1, 5;
  EXPECT_NEAR(statistic_T(p, q), std::hypot(1.0, 4.0), 1e-12);
  // a single column reduces to the scalar statistic
  const std::vector<double> a{1, 2, 3}, b{4, 5};
  const Eigen::MatrixXd ma = Eigen::Map<const Eigen::VectorXd>(a.data(), 3), mb = Eigen::Map<const Eigen::VectorXd>(b.data(), 2);
  EXPECT_EQ(permutation_test(ma, mb, monte_carlo(500, 1)).p_value, permutation_test(a, b, monte_carlo(500, 1)).p_value);
}

TEST(PermutationTest, Preconditions) {
  EXPECT_THROW((void)permutation_test(std::vector<double>{}, std::vector<double>{1.0}, monte_carlo(10, 1)), Error);
  EXPECT_THROW((void)permutation_test(std::vector<double>{1.0}, std::vector<double>{2.0}, monte_carlo(0, 1)), Error);
}

TEST(SpecialFunctions, MatchReferenceImplementation) {
  for (double a : {0.5, 1.0, 2.5, 10.0, 40.0}) {
    for (double b : {0.5, 3.0, 17.0}) {
      for (double x : {0.001, 0.1, 0.35, 0.5, 0.8, 0.999}) {
        EXPECT_NEAR(incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-13) << a << " " << b << " " << x;
      }
    }
    for (double x : {0.01, 0.7, 3.0, 12.0, 60.0}) {
      EXPECT_NEAR(incomplete_gamma_upper(a, x), boost::math::gamma_q(a, x), 1e-13) << a << " " << x;
    }
  }
}

TEST(TTest, IdenticalSamples) {
  const std::vector<double> a{1.5, 2.0, 4.0, 3.3};
  const auto r = t_test(a, a);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  const std::vector<double> c{2, 2, 2};
  EXPECT_DOUBLE_EQ(t_test(c, c).p_value, 1.0);
}

TEST(TTest, WelchTextbook) {
  const auto r = t_test(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{3, 4, 5, 6, 7});
  EXPECT_NEAR(r.statistic, -2.0, 1e-12);
  EXPECT_NEAR(r.df, 8.0, 1e-12);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(8.0), 2.0));
  EXPECT_NEAR(r.p_value, p, 1e-12);
  EXPECT_NEAR(r.p_value, 0.0805, 5e-5);
}

TEST(TTest, MatchesDirectFormula) {
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> a, b;
    for (int j = 0; j < 6 + i; ++j) a.push_back(rng.normal(0.5, 1.0 + 0.2 * i));
    for (int j = 0; j < 9; ++j) b.push_back(rng.normal(0.0, 0.7));
    // two-pass direct evaluation of the Welch quantities
    double ma = 0, mb = 0, va = 0, vb = 0;
    for (double v : a) ma += v / a.size();
    for (double v : b) mb += v / b.size();
    for (double v : a) va += (v - ma) * (v - ma) / (a.size() - 1);
    for (double v : b) vb += (v - mb) * (v - mb) / (b.size() - 1);
    const double se = std::sqrt(va / a.size() + vb / b.size());
    const double t = (ma - mb) / se;
    const double df = std::pow(va / a.size() + vb / b.size(), 2) /
                      (std::pow(va / a.size(), 2) / (a.size() - 1) + std::pow(vb / b.size(), 2) / (b.size() - 1));
    const boost::math::students_t dist(df);
    for (auto alt : {Alternative::TwoSided, Alternative::Greater, Alternative::Less}) {
      const auto r = t_test(a, b, alt);
      EXPECT_NEAR(r.statistic, t, 1e-9);
      EXPECT_NEAR(r.df, df, 1e-9);
      const double p = alt == Alternative::TwoSided ? 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)))
                       : alt == Alternative::Greater ? boost::math::cdf(boost::math::complement(dist, t))
                                                     : boost::math::cdf(dist, t);
      EXPECT_NEAR(r.p_value, p, 1e-9);
    }
  }
}

TEST(TTest, ScaleInvariance) {
  Rng rng(4);
  const auto a = normals(rng, 8, 0.6), b = normals(rng, 11);
  std::vector<double> a10, b10;
  for (double v : a) a10.push_back(10 * v);
  for (double v : b) b10.push_back(10 * v);
  const auto r = t_test(a, b), r10 = t_test(a10, b10);
  EXPECT_NEAR(r.statistic, r10.statistic, 1e-10);
  EXPECT_NEAR(r.p_value, r10.p_value, 1e-10);
}

TEST(TTest, Preconditions) {
  EXPECT_THROW((void)t_test(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), Error);
  EXPECT_EQ(parse_alternative("less"), Alternative::Less);
  EXPECT_THROW((void)parse_alternative("both"), Error);
}

TEST(ChiSquare, Independence) {
  Eigen::MatrixXd t(2, 2);
  t << 10, 10, 10, 10;
  auto r = chi_square_independence(t);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.df, 1.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  t << 20, 0, 0, 20;
  r = chi_square_independence(t);
  EXPECT_NEAR(r.statistic, 40.0, 1e-12);
  EXPECT_LT(r.p_value, 1e-9);
  EXPECT_NEAR(r.p_value, boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), 40.0)), 1e-20);
}

TEST(ChiSquare, RandomTableMatchesDirectFormula) {
  Rng rng(31);
  Eigen::MatrixXd t(5, 3);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) t(i, j) = static_cast<double>(rng.integer(1, 40));
  double total = t.sum(), stat = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double e = t.row(i).sum() * t.col(j).sum() / total;
      stat += std::pow(t(i, j) - e, 2) / e;
    }
  const auto r = chi_square_independence(t);
  EXPECT_NEAR(r.statistic, stat, 1e-9);
  EXPECT_EQ(r.df, 8.0);
  EXPECT_NEAR(r.p_value, boost::math::cdf(boost::math::complement(boost::math::chi_squared(8.0), stat)), 1e-9);
}

TEST(ChiSquare, ZeroMargin) {
  Eigen::MatrixXd t(2, 3);
  t << 1, 0, 2, 3, 0, 4;
  try {
    (void)chi_square_independence(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroMargin);
  }
}

TEST(Bonferroni, Thresholds) {
  EXPECT_NEAR(bonferroni(0.05, 39), 0.05 / 39.0, 1e-15);
  EXPECT_NEAR(std::round(bonferroni(0.05, 39) * 1000.0) / 1000.0, 0.001, 1e-15);
  EXPECT_DOUBLE_EQ(bonferroni(0.05, 1), 0.05);
  EXPECT_NEAR(bonferroni(0.10, 5), 0.02, 1e-15);
  EXPECT_THROW((void)bonferroni(0.05, 0), Error);
  EXPECT_THROW((void)bonferroni(1.5, 3), Error);
}

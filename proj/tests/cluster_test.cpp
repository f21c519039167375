#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "agecurve/cluster.hpp"
#include "agecurve/random.hpp"
#include "agecurve/simulate.hpp"

using namespace agecurve;

namespace {

const std::vector<std::vector<double>> kThreeCenters{{0, 0, 0}, {6, 1.8, -1.2}, {2.4, 6, 3}};

// labels agree up to a relabeling of clusters
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

KMeansOptions opts(std::size_t restarts, std::uint64_t seed) {
  KMeansOptions o;
  o.restarts = restarts;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(KMeans, RecoversSeparatedBlobs) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto b = simulate_blobs({{0, 0}, {20, 0}}, 30, 1.0, seed);
    const auto r = kmeans(b.points, 2, opts(5, seed));
    EXPECT_TRUE(same_partition(r.assignments, b.labels)) << "seed " << seed;
  }
}

TEST(KMeans, SingletonAndSingleCluster) {
  Rng rng(2);
  Eigen::MatrixXd x(12, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  EXPECT_NEAR(kmeans(x, 12, opts(3, 1)).sse, 0.0, 1e-20);

  double direct = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) m += x(i, j) / x.rows();
    for (Eigen::Index i = 0; i < x.rows(); ++i) direct += (x(i, j) - m) * (x(i, j) - m);
  }
  EXPECT_NEAR(kmeans(x, 1, opts(3, 1)).sse, direct, 1e-9);
}

TEST(KMeans, InvalidK) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 2);
  try {
    (void)kmeans(x, 5, opts(1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidK);
  }
  EXPECT_THROW((void)kmeans(x, 0, opts(1, 0)), Error);
  EXPECT_THROW((void)kmeans(x, 2, opts(0, 0)), Error);
}

TEST(KMeans, SseNonIncreasingPerIteration) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto b = simulate_blobs(kThreeCenters, 40, 1.5, seed);
    for (std::size_t k : {2u, 3u, 5u, 9u}) {
      const auto r = kmeans(b.points, k, opts(4, seed));
      ASSERT_FALSE(r.sse_history.empty());
      for (std::size_t i = 1; i < r.sse_history.size(); ++i) EXPECT_LE(r.sse_history[i], r.sse_history[i - 1]);
      EXPECT_DOUBLE_EQ(r.sse_history.back(), r.sse);
    }
  }
}

TEST(KMeans, BestOfRestartsMonotone) {
  const auto b = simulate_blobs(kThreeCenters, 25, 3.0, 7);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t restarts = 1; restarts <= 12; ++restarts) {
    const double sse = kmeans(b.points, 6, opts(restarts, 11)).sse;
    EXPECT_LE(sse, prev);
    prev = sse;
  }
}

TEST(KMeans, ClustersNonEmptyWithDuplicates) {
  Eigen::MatrixXd x(8, 1);
  x << 0, 0, 0, 0, 0, 0, 1, 1;
  const auto r = kmeans(x, 4, opts(3, 5));
  std::vector<int> counts(4, 0);
  for (auto l : r.assignments) ++counts[l];
  for (int c : counts) EXPECT_GT(c, 0);
  EXPECT_NEAR(r.sse, 0.0, 1e-20);
}

TEST(KMeans, Deterministic) {
  const auto b = simulate_blobs(kThreeCenters, 20, 2.0, 3);
  const auto r1 = kmeans(b.points, 4, opts(5, 8)), r2 = kmeans(b.points, 4, opts(5, 8));
  EXPECT_EQ(r1.assignments, r2.assignments);
  EXPECT_EQ(r1.sse, r2.sse);
}

TEST(NullReference, PermutationPreservesColumns) {
  const auto b = simulate_blobs(kThreeCenters, 15, 1.0, 4);
  const auto p = permute_columns(b.points, 99);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    std::vector<double> a(b.points.col(j).data(), b.points.col(j).data() + b.points.rows());
    std::vector<double> c(p.col(j).data(), p.col(j).data() + p.rows());
    std::sort(a.begin(), a.end());
    std::sort(c.begin(), c.end());
    EXPECT_EQ(a, c);
  }
  EXPECT_FALSE(p.isApprox(b.points));
}

TEST(NullReference, OneDimensionMatchesActual) {
  Rng rng(6);
  Eigen::MatrixXd x(40, 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = rng.normal() + (i % 3) * 4.0;
  const std::vector<std::size_t> ks{1, 2, 3, 4};
  const auto ref = null_sse_reference(x, ks, 5, opts(10, 1));
  for (std::size_t j = 0; j < ks.size(); ++j) {
    const double actual = kmeans(x, ks[j], opts(10, 2)).sse;
    EXPECT_NEAR(ref.min_sse[j], actual, 1e-6);
    EXPECT_NEAR(ref.mean_sse[j], actual, 1e-6);
  }
}

TEST(NullReference, SingleRunMinEqualsMean) {
  const auto b = simulate_blobs(kThreeCenters, 10, 1.0, 1);
  const auto ref = null_sse_reference(b.points, {1, 2, 3}, 1, opts(3, 1));
  EXPECT_EQ(ref.min_sse, ref.mean_sse);
  EXPECT_EQ(ref.values.size(), 1u);
}

TEST(NullReference, ThreadCountDoesNotMatter) {
  const auto b = simulate_blobs(kThreeCenters, 12, 1.0, 2);
  const auto a = null_sse_reference(b.points, {2, 3}, 9, opts(3, 4), 1);
  const auto c = null_sse_reference(b.points, {2, 3}, 9, opts(3, 4), 4);
  EXPECT_EQ(a.values, c.values);
}

TEST(NullReference, StructureBeatsNullMinimum) {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto b = simulate_blobs(kThreeCenters, 30, 0.5, derive_seed(71, seed));
    const auto ref = null_sse_reference(b.points, {3}, 30, opts(5, seed));
    wins += kmeans(b.points, 3, opts(5, seed)).sse < ref.min_sse[0];
  }
  EXPECT_GE(wins, 19);
}

TEST(SelectK, AgreementAndFlags) {
  const std::vector<std::size_t> ks{1, 2, 3, 4, 5};
  const std::vector<double> actual{100, 60, 20, 18, 16};
  const std::vector<double> nmin{100, 70, 50, 40, 30}, nmean{100, 75, 55, 45, 35};
  const auto s = select_k(actual, nmin, nmean, ks);
  EXPECT_EQ(s.selected_k, 3u);
  EXPECT_EQ(s.argmax_min_k, 3u);
  EXPECT_FALSE(s.disagreement);
  EXPECT_FALSE(s.no_structure);
  EXPECT_NEAR(s.gap_mean[2], std::log(55.0 / 20.0), 1e-12);
  EXPECT_NEAR(s.gap_min[1], std::log(70.0 / 60.0), 1e-12);
}

TEST(SelectK, DisagreementReportsBoth) {
  const std::vector<std::size_t> ks{2, 3, 4};
  const auto s = select_k({10, 8, 5}, {40, 30, 14}, {20, 30, 12}, ks);
  EXPECT_EQ(s.selected_k, 3u);
  EXPECT_EQ(s.argmax_min_k, 2u);
  EXPECT_TRUE(s.disagreement);
}

TEST(SelectK, NoStructure) {
  const std::vector<std::size_t> ks{1, 2, 3, 4};
  const std::vector<double> sse{40, 30, 22, 15};
  const auto s = select_k(sse, sse, sse, ks);
  EXPECT_EQ(s.selected_k, 1u);
  EXPECT_TRUE(s.no_structure);
  for (double g : s.gap_mean) EXPECT_NEAR(g, 0.0, 1e-12);
  EXPECT_THROW((void)select_k({1, 2}, {1}, {1, 2}, {1, 2}), Error);
}

TEST(SelectK, ZeroSseGapIsUndefined) {
  const auto s = select_k({9, 0}, {12, 0}, {12, 0}, {1, 2});
  EXPECT_TRUE(std::isnan(s.gap_mean[1]));
  EXPECT_EQ(s.selected_k, 1u);
}

TEST(ClusterScores, SelectsThreeClusters) {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto b = simulate_blobs(kThreeCenters, 40, 1.0, derive_seed(500, seed));
    const auto rep = cluster_scores(b.points, {1, 2, 3, 4, 5, 6}, 40, opts(5, seed));
    hits += rep.selection.selected_k == 3;
    for (std::size_t j = 1; j < rep.actual_sse.size(); ++j) EXPECT_LE(rep.actual_sse[j], rep.actual_sse[j - 1]);
    EXPECT_EQ(rep.fit.assignments.size(), 120u);
  }
  EXPECT_GE(hits, 18);
}

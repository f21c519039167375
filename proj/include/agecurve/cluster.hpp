#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/error.hpp"
#include "agecurve/random.hpp"

namespace agecurve {

struct KMeansOptions {
  std::size_t restarts = 25;
  std::size_t max_iterations = 300;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Eigen::MatrixXd centroids;           // k x D
  double sse = 0.0;
  std::vector<double> sse_history;     // per Lloyd iteration, best restart
  std::size_t best_restart = 0;
  std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index j) {
  return (x.row(i) - c.row(j)).squaredNorm();
}

inline Eigen::MatrixXd kmeanspp_seed(const Eigen::MatrixXd& x, std::size_t k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(static_cast<Eigen::Index>(k), x.cols());
  c.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, c, 0);
  for (std::size_t j = 1; j < k; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c.row(static_cast<Eigen::Index>(j)) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, c, static_cast<Eigen::Index>(j)));
    }
  }
  return c;
}

// Nearest centroid per point, ties to the lower index.
inline void assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, std::vector<std::size_t>& labels) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    double bd = sq_dist(x, i, c, 0);
    for (Eigen::Index j = 1; j < c.rows(); ++j) {
      const double d = sq_dist(x, i, c, j);
      if (d < bd) {
        bd = d;
        best = static_cast<std::size_t>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
}

// Gives every empty cluster the point farthest from its centroid, taken
// from a cluster that keeps at least one member.
inline void repair_empty(const Eigen::MatrixXd& x, Eigen::MatrixXd& c, std::vector<std::size_t>& labels) {
  const auto k = static_cast<std::size_t>(c.rows());
  std::vector<std::size_t> counts(k, 0);
  for (auto l : labels) ++counts[l];
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] > 0) continue;
    Eigen::Index far = -1;
    double fd = -1.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto l = labels[static_cast<std::size_t>(i)];
      if (counts[l] < 2) continue;
      const double d = sq_dist(x, i, c, static_cast<Eigen::Index>(l));
      if (d > fd) {
        fd = d;
        far = i;
      }
    }
    --counts[labels[static_cast<std::size_t>(far)]];
    labels[static_cast<std::size_t>(far)] = j;
    counts[j] = 1;
    c.row(static_cast<Eigen::Index>(j)) = x.row(far);
  }
}

inline double sse_of(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, const std::vector<std::size_t>& labels) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += sq_dist(x, i, c, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
  return s;
}

inline Eigen::MatrixXd centroids_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels, std::size_t k) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
  std::vector<double> counts(k, 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto l = labels[static_cast<std::size_t>(i)];
    c.row(static_cast<Eigen::Index>(l)) += x.row(i);
    counts[l] += 1.0;
  }
  for (std::size_t j = 0; j < k; ++j) c.row(static_cast<Eigen::Index>(j)) /= counts[j];
  return c;
}

struct LloydRun {
  std::vector<std::size_t> labels;
  Eigen::MatrixXd centroids;
  std::vector<double> history;
};

inline LloydRun lloyd(const Eigen::MatrixXd& x, std::size_t k, std::size_t max_iter, Rng& rng) {
  LloydRun run;
  run.centroids = kmeanspp_seed(x, k, rng);
  run.labels.assign(static_cast<std::size_t>(x.rows()), 0);
  assign(x, run.centroids, run.labels);
  repair_empty(x, run.centroids, run.labels);
  std::vector<std::size_t> next(run.labels.size());
  for (std::size_t it = 0; it < max_iter; ++it) {
    run.centroids = centroids_of(x, run.labels, k);
    const double sse = sse_of(x, run.centroids, run.labels);
    if (!run.history.empty()) {
      const double prev = run.history.back();
      if (sse > prev + 1e-9 * std::max(1.0, prev)) {
        throw Error(ErrorCode::NumericalError, "k-means SSE increased during Lloyd iterations");
      }
    }
    run.history.push_back(sse);
    assign(x, run.centroids, next);
    repair_empty(x, run.centroids, next);
    if (next == run.labels) break;
    run.labels.swap(next);
  }
  return run;
}

}  // namespace detail

inline double total_sum_of_squares(const Eigen::MatrixXd& x) {
  return (x.rowwise() - x.colwise().mean()).squaredNorm();
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs.
/// Restart r draws from its own stream, so adding restarts never makes
/// the result worse.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, std::size_t k, const KMeansOptions& opt = {}) {
  require(x.rows() > 0 && x.cols() > 0, ErrorCode::InvalidArgument, "k-means needs a non-empty point matrix");
  require(x.allFinite(), ErrorCode::InvalidArgument, "points must be finite");
  require(k >= 1 && k <= static_cast<std::size_t>(x.rows()), ErrorCode::InvalidK,
          "k = " + std::to_string(k) + " must lie in [1, " + std::to_string(x.rows()) + "]");
  require(opt.restarts >= 1, ErrorCode::InvalidArgument, "restarts must be >= 1");
  require(opt.max_iterations >= 1, ErrorCode::InvalidArgument, "max_iterations must be >= 1");

  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    Rng rng(derive_seed(opt.seed, r));
    auto run = detail::lloyd(x, k, opt.max_iterations, rng);
    const double sse = run.history.back();
    if (sse < best.sse) {
      best.sse = sse;
      best.assignments = std::move(run.labels);
      best.centroids = std::move(run.centroids);
      best.iterations = run.history.size();
      best.sse_history = std::move(run.history);
      best.best_restart = r;
    }
  }
  return best;
}

/// Column-wise permutation of the rows: each coordinate is shuffled
/// independently, preserving its multiset of values.
inline Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& x, std::uint64_t seed) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(std::span<Eigen::Index>(idx));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, c) = x(idx[static_cast<std::size_t>(i)], c);
  }
  return out;
}

struct NullReference {
  std::vector<std::size_t> k_range;
  std::vector<double> min_sse, mean_sse;   // per k
  std::vector<std::vector<double>> values;  // runs x |k_range|
};

/// SSE of k-means on `runs` column-permuted copies of the scores. Runs are
/// spread over `threads` workers; each run has its own seed stream, so the
/// result does not depend on the thread count.
inline NullReference null_sse_reference(const Eigen::MatrixXd& x, const std::vector<std::size_t>& k_range,
                                        std::size_t runs, const KMeansOptions& opt, unsigned threads = 0) {
  require(runs >= 1, ErrorCode::InvalidArgument, "runs must be >= 1");
  require(!k_range.empty(), ErrorCode::InvalidArgument, "k_range must not be empty");
  for (auto k : k_range) {
    require(k >= 1 && k <= static_cast<std::size_t>(x.rows()), ErrorCode::InvalidK,
            "k = " + std::to_string(k) + " out of range");
  }
  NullReference ref;
  ref.k_range = k_range;
  ref.values.assign(runs, std::vector<double>(k_range.size(), 0.0));

  auto one_run = [&](std::size_t r) {
    const std::uint64_t run_seed = derive_seed(opt.seed, 0x6e756c6cULL, r);
    const Eigen::MatrixXd perm = permute_columns(x, run_seed);
    for (std::size_t j = 0; j < k_range.size(); ++j) {
      KMeansOptions o = opt;
      o.seed = derive_seed(run_seed, k_range[j]);
      ref.values[r][j] = kmeans(perm, k_range[j], o).sse;
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, runs));
  if (threads <= 1) {
    for (std::size_t r = 0; r < runs; ++r) one_run(r);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t r = t; r < runs; r += threads) one_run(r);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (std::size_t j = 0; j < k_range.size(); ++j) {
    double mn = std::numeric_limits<double>::infinity(), sum = 0.0;
    for (std::size_t r = 0; r < runs; ++r) {
      mn = std::min(mn, ref.values[r][j]);
      sum += ref.values[r][j];
    }
    ref.min_sse.push_back(mn);
    ref.mean_sse.push_back(sum / static_cast<double>(runs));
  }
  return ref;
}

struct KSelection {
  std::size_t selected_k = 1;
  std::size_t argmax_min_k = 1;
  std::vector<double> gap_min, gap_mean;  // log(null) - log(actual); NaN when undefined
  bool disagreement = false;
  bool no_structure = false;
};

/// Picks k maximizing the log-scale gap to the mean null SSE. Gaps within
/// `tol` of the maximum are ties and go to the smaller k.
inline KSelection select_k(const std::vector<double>& actual, const std::vector<double>& null_min,
                           const std::vector<double>& null_mean, const std::vector<std::size_t>& k_range,
                           double tol = 1e-9) {
  require(!k_range.empty() && actual.size() == k_range.size() && null_min.size() == k_range.size() &&
              null_mean.size() == k_range.size(),
          ErrorCode::InvalidArgument, "select_k needs equal-length, non-empty lists");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto gap = [&](double null, double act) { return null > 0.0 && act > 0.0 ? std::log(null) - std::log(act) : nan; };
  KSelection s;
  for (std::size_t j = 0; j < k_range.size(); ++j) {
    s.gap_min.push_back(gap(null_min[j], actual[j]));
    s.gap_mean.push_back(gap(null_mean[j], actual[j]));
  }
  auto pick = [&](const std::vector<double>& g) -> std::pair<std::size_t, double> {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : g) {
      if (std::isfinite(v)) mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) return {k_range.front(), mx};
    std::size_t best = k_range.front();
    bool found = false;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (std::isfinite(g[j]) && g[j] >= mx - tol && (!found || k_range[j] < best)) {
        best = k_range[j];
        found = true;
      }
    }
    return {best, mx};
  };
  const auto [k_mean, max_mean] = pick(s.gap_mean);
  const auto [k_min, max_min] = pick(s.gap_min);
  (void)max_min;
  s.selected_k = k_mean;
  s.argmax_min_k = k_min;
  s.disagreement = k_mean != k_min;
  s.no_structure = !(max_mean > tol);
  return s;
}

struct ClusterReport {
  std::vector<std::size_t> k_range;
  std::vector<double> actual_sse;
  NullReference null;
  KSelection selection;
  KMeansResult fit;  // at the selected k
  std::size_t runs = 0;
  std::uint64_t seed = 0;
};

inline ClusterReport cluster_scores(const Eigen::MatrixXd& x, const std::vector<std::size_t>& k_range,
                                    std::size_t runs, const KMeansOptions& opt, unsigned threads = 0) {
  ClusterReport rep;
  rep.k_range = k_range;
  rep.runs = runs;
  rep.seed = opt.seed;
  rep.null = null_sse_reference(x, k_range, runs, opt, threads);
  std::vector<KMeansResult> fits;
  for (auto k : k_range) {
    KMeansOptions o = opt;
    o.seed = derive_seed(opt.seed, 0x61637475ULL, k);
    fits.push_back(kmeans(x, k, o));
    rep.actual_sse.push_back(fits.back().sse);
  }
  rep.selection = select_k(rep.actual_sse, rep.null.min_sse, rep.null.mean_sse, k_range);
  const auto at = std::find(k_range.begin(), k_range.end(), rep.selection.selected_k) - k_range.begin();
  rep.fit = fits[static_cast<std::size_t>(at)];
  return rep;
}

}  // namespace agecurve

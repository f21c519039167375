#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/error.hpp"
#include "agecurve/random.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve {

/// Synthetic longitudinal cohort y_ij = mu(t_ij) + sum_k xi_ik psi_k(t_ij) + e_ij
/// with psi_k(t) = sqrt(2/L) sin(k pi (t - lo) / L), orthonormal on the domain.
struct SimulationConfig {
  std::pair<double, double> domain{0.0, 1.0};
  std::size_t subjects = 200;
  std::size_t min_obs = 3;
  std::size_t max_obs = 8;
  bool integer_times = false;  // observe at whole-number ages instead of uniform draws
  std::vector<double> eigenvalues{2.0};
  double noise_sd = 0.0;
  double mean_level = 1.0;
  double mean_amplitude = 1.0;
  double group_shift = 0.0;  // added to the mean of group "B"
  std::uint64_t seed = 1;
};

struct SimulatedCohort {
  std::vector<PlayerSeries> series;
  std::vector<std::vector<double>> scores;  // true xi, N x K
};

inline double sim_mean(const SimulationConfig& c, double t) {
  const double u = (t - c.domain.first) / (c.domain.second - c.domain.first);
  return c.mean_level + c.mean_amplitude * std::sin(std::numbers::pi * u) * (1.0 - 0.3 * u);
}

inline double sim_eigenfunction(const SimulationConfig& c, std::size_t k, double t) {
  const double len = c.domain.second - c.domain.first;
  const double u = (t - c.domain.first) / len;
  return std::sqrt(2.0 / len) * std::sin(static_cast<double>(k + 1) * std::numbers::pi * u);
}

inline double sim_truth(const SimulationConfig& c, std::span<const double> xi, double t) {
  double v = sim_mean(c, t);
  for (std::size_t k = 0; k < xi.size(); ++k) v += xi[k] * sim_eigenfunction(c, k, t);
  return v;
}

inline SimulatedCohort simulate_cohort(const SimulationConfig& c) {
  require(c.domain.second > c.domain.first, ErrorCode::InvalidArgument, "domain must have lo < hi");
  require(c.min_obs >= 1 && c.min_obs <= c.max_obs, ErrorCode::InvalidArgument, "need 1 <= min_obs <= max_obs");
  require(c.noise_sd >= 0.0, ErrorCode::InvalidArgument, "noise_sd must be >= 0");
  for (double l : c.eigenvalues) require(l >= 0.0, ErrorCode::InvalidArgument, "eigenvalues must be >= 0");
  std::vector<double> ages;
  if (c.integer_times) {
    for (double a = std::ceil(c.domain.first); a <= c.domain.second; a += 1.0) ages.push_back(a);
    require(ages.size() >= c.max_obs, ErrorCode::InvalidArgument, "domain has fewer whole ages than max_obs");
  }

  SimulatedCohort out;
  for (std::size_t i = 0; i < c.subjects; ++i) {
    Rng rng(derive_seed(c.seed, i));
    PlayerSeries s;
    s.id = "P" + std::to_string(i + 1);
    const bool group_b = i % 2 == 1;
    s.meta["group"] = group_b ? "B" : "A";
    const auto n = static_cast<std::size_t>(rng.integer(static_cast<long long>(c.min_obs), static_cast<long long>(c.max_obs)));
    std::vector<double> xi(c.eigenvalues.size());
    for (std::size_t k = 0; k < xi.size(); ++k) xi[k] = std::sqrt(c.eigenvalues[k]) * rng.normal();
    if (c.integer_times) {
      const auto start = static_cast<std::size_t>(rng.below(ages.size() - n + 1));
      s.times.assign(ages.begin() + static_cast<std::ptrdiff_t>(start), ages.begin() + static_cast<std::ptrdiff_t>(start + n));
    } else {
      for (std::size_t j = 0; j < n; ++j) s.times.push_back(rng.uniform(c.domain.first, c.domain.second));
      std::sort(s.times.begin(), s.times.end());
      s.times.erase(std::unique(s.times.begin(), s.times.end()), s.times.end());
    }
    for (double t : s.times) {
      double v = sim_truth(c, xi, t) + c.noise_sd * rng.normal();
      if (group_b) v += c.group_shift;
      s.values.push_back(v);
    }
    out.series.push_back(std::move(s));
    out.scores.push_back(std::move(xi));
  }
  return out;
}

/// Isotropic Gaussian blobs around the given centers, `per_cluster` points each.
struct BlobData {
  Eigen::MatrixXd points;
  std::vector<std::size_t> labels;
};

inline BlobData simulate_blobs(const std::vector<std::vector<double>>& centers, std::size_t per_cluster, double sd,
                               std::uint64_t seed) {
  require(!centers.empty(), ErrorCode::InvalidArgument, "no centers");
  const std::size_t d = centers.front().size();
  Rng rng(seed);
  BlobData out;
  out.points.resize(static_cast<Eigen::Index>(centers.size() * per_cluster), static_cast<Eigen::Index>(d));
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    require(centers[c].size() == d, ErrorCode::InvalidArgument, "centers differ in dimension");
    for (std::size_t i = 0; i < per_cluster; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) out.points(row, static_cast<Eigen::Index>(j)) = centers[c][j] + sd * rng.normal();
      out.labels.push_back(c);
    }
  }
  return out;
}

}  // namespace agecurve

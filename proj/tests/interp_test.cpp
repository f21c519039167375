#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "agecurve/interp.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/random.hpp"

using namespace agecurve;

TEST(Pchip, ExactAtNodes) {
  Rng rng(11);
  std::vector<double> x{0.0, 0.3, 0.35, 1.0, 2.5}, y;
  for (std::size_t i = 0; i < x.size(); ++i) y.push_back(rng.normal());
  const Pchip p(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(p(x[i]), y[i]);
}

TEST(Pchip, ReproducesLines) {
  const auto x = linspace(-1, 3, 9);
  std::vector<double> y;
  for (double t : x) y.push_back(2.0 - 0.7 * t);
  const Pchip p(x, y);
  for (double t : linspace(-1, 3, 401)) EXPECT_NEAR(p(t), 2.0 - 0.7 * t, 1e-13);
}

TEST(Pchip, PreservesMonotonicity) {
  const std::vector<double> x{0, 1, 2, 3, 4, 5}, y{0, 0.1, 0.2, 5.0, 5.1, 9.0};
  const Pchip p(x, y);
  double prev = p(0.0);
  for (double t : linspace(0, 5, 1001)) {
    const double v = p(t);
    EXPECT_GE(v, prev - 1e-14);
    prev = v;
  }
  // flat data stays flat, no overshoot
  const Pchip flat(std::vector<double>{0, 1, 2, 3}, std::vector<double>{1, 1, 2, 2});
  for (double t : linspace(0, 3, 301)) {
    EXPECT_GE(flat(t), 1.0 - 1e-14);
    EXPECT_LE(flat(t), 2.0 + 1e-14);
  }
}

TEST(Pchip, SmoothFunctionAccuracy) {
  // converges faster than first order, including near the extremum at pi / 6
  auto max_error = [](std::size_t nodes) {
    const auto x = linspace(0, 1, nodes);
    std::vector<double> y;
    for (double t : x) y.push_back(std::sin(3.0 * t));
    const Pchip p(x, y);
    double worst = 0.0;
    for (double t : linspace(0, 1, 777)) worst = std::max(worst, std::abs(p(t) - std::sin(3.0 * t)));
    return worst;
  };
  const double coarse = max_error(51), fine = max_error(101);
  EXPECT_LT(coarse, 0.02 * 0.02 * 9.0 / 8.0);
  EXPECT_LT(fine, coarse / 2.0);
}

TEST(Pchip, Errors) {
  EXPECT_THROW(Pchip(std::vector<double>{0.0}, std::vector<double>{1.0}), Error);
  EXPECT_THROW(Pchip(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 2.0}), Error);
  const Pchip p(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 2.0});
  try {
    (void)p(1.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfDomain);
  }
}

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agecurve/app/config.hpp"
#include "agecurve/app/output.hpp"
#include "agecurve/basis.hpp"
#include "agecurve/cluster.hpp"
#include "agecurve/curveops.hpp"
#include "agecurve/fpca.hpp"
#include "agecurve/inference.hpp"
#include "agecurve/ingest.hpp"
#include "agecurve/pace.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/simulate.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve::app {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"smooth", "fpca", "pace", "permtest", "cluster", "summary", "simulate"};
  return names;
}

/// 2 configuration, 3 data, 4 numerical.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidKnots:
    case ErrorCode::InvalidK:
      return 2;
    case ErrorCode::SingularFit:
    case ErrorCode::NumericalError:
    case ErrorCode::CVUndefined:
      return 4;
    default:
      return 3;
  }
}

inline constexpr std::string_view kNoGroupLabel = "NO_GROUP_LABEL";
inline constexpr std::string_view kOtherGroup = "OTHER_GROUP";

struct Dataset {
  std::vector<PlayerSeries> series;
  std::vector<SeasonRecord> records;
  std::vector<RejectedRow> rejects;
  std::vector<Exclusion> exclusions;
};

inline Dataset load_dataset(const RunConfig& c) {
  auto loaded = load_csv(*c.input.path, c.input.schema);
  Dataset d;
  d.rejects = std::move(loaded.rejects);
  CohortResult cohort;
  if (c.input.cohort == "mlb") {
    cohort = filter_mlb_cohort(loaded.records, c.input.mlb);
  } else if (c.input.cohort == "nba") {
    cohort = filter_nba_cohort(loaded.records, c.input.nba);
  } else {
    cohort = group_series(loaded.records);
  }
  d.series = std::move(cohort.series);
  d.exclusions = std::move(cohort.exclusions);
  d.records = std::move(loaded.records);
  require(!d.series.empty(), ErrorCode::InsufficientData, "no players remain after filtering");
  return d;
}

inline void write_audit(StagedOutput& out, const Dataset& d) {
  Table rejects({"row", "reason"});
  for (const auto& r : d.rejects) rejects.add({std::to_string(r.row), r.reason});
  out.write("rejects.csv", rejects);
  std::ostringstream os;
  write_exclusions(os, d.exclusions);
  out.write_text("exclusions.csv", os.str());
}

/// Second-order differences on a possibly non-uniform grid.
inline std::vector<double> grid_derivative(const std::vector<double>& grid, const std::vector<double>& v) {
  const std::size_t n = grid.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  if (n == 2) {
    d[0] = d[1] = (v[1] - v[0]) / (grid[1] - grid[0]);
    return d;
  }
  auto three_point = [&](std::size_t i0, std::size_t i1, std::size_t i2, double at) {
    const double x0 = grid[i0], x1 = grid[i1], x2 = grid[i2];
    return v[i0] * (2 * at - x1 - x2) / ((x0 - x1) * (x0 - x2)) + v[i1] * (2 * at - x0 - x2) / ((x1 - x0) * (x1 - x2)) +
           v[i2] * (2 * at - x0 - x1) / ((x2 - x0) * (x2 - x1));
  };
  d[0] = three_point(0, 1, 2, grid[0]);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = three_point(i - 1, i, i + 1, grid[i]);
  d[n - 1] = three_point(n - 3, n - 2, n - 1, grid[n - 1]);
  return d;
}

// ---------------------------------------------------------------------------
// Smoothing

struct SmoothResult {
  BasisSpec spec;
  std::vector<PlayerSeries> series;  // as fitted, after optional demeaning
  std::vector<SmoothedCurve> curves;
  std::optional<LambdaSelection> shared;
  std::vector<LambdaSelection> per_subject;
  std::vector<double> grid;
};

inline std::pair<double, double> data_domain(const std::vector<PlayerSeries>& series) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (double t : s.times) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  require(lo < hi, ErrorCode::InsufficientData, "observed ages span a single point");
  return {lo, hi};
}

inline SmoothResult smooth_cohort(const RunConfig& c, const std::vector<PlayerSeries>& series) {
  const auto dom = c.basis.domain.value_or(data_domain(series));
  SmoothResult r{c.basis.interior_knots ? make_basis(c.basis.degree, *c.basis.interior_knots, dom)
                                        : make_uniform_basis(c.basis.degree, c.basis.knot_count, dom),
                 {}, {}, std::nullopt, {}, linspace(dom.first, dom.second, c.grid_size)};
  for (const auto& s : series) r.series.push_back(c.smoothing.demean ? demean(s) : s);
  const PenalizedSmoother smoother(r.spec);
  if (c.smoothing.lambda) {
    for (const auto& s : r.series) r.curves.push_back(smoother.fit_curve(s, *c.smoothing.lambda));
  } else if (c.smoothing.shared) {
    r.shared = select_shared_lambda_gcv(r.spec, r.series, c.smoothing.lambda_grid);
    for (const auto& s : r.series) r.curves.push_back(smoother.fit_curve(s, r.shared->lambda));
  } else {
    for (const auto& s : r.series) {
      validate(s);
      r.per_subject.push_back(select_lambda_gcv(smoother, s.times, s.values, c.smoothing.lambda_grid));
      r.curves.push_back(smoother.fit_curve(s, r.per_subject.back().lambda));
    }
  }
  return r;
}

inline nlohmann::ordered_json basis_json(const SmoothResult& s) {
  auto lambda = nlohmann::ordered_json(nullptr);
  if (s.per_subject.empty() && !s.curves.empty()) lambda = s.curves.front().lambda;
  return {{"degree", s.spec.degree()},
          {"domain", {s.spec.lo(), s.spec.hi()}},
          {"interior_knots", s.spec.interior_knots()},
          {"knots", s.spec.knots()},
          {"dimension", s.spec.dimension()},
          {"lambda", lambda},
          {"lambda_selection", s.shared ? "shared_gcv" : (s.per_subject.empty() ? "fixed" : "per_subject_gcv")}};
}

inline Eigen::MatrixXd curve_values(const std::vector<SmoothedCurve>& curves, const std::vector<double>& grid, int deriv) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(curves.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto v = eval_curve(curves[i], grid, deriv);
    for (std::size_t g = 0; g < grid.size(); ++g) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) = v[g];
  }
  return out;
}

/// Pointwise mean and unbiased variance over rows.
inline std::pair<std::vector<double>, std::vector<double>> column_moments(const Eigen::MatrixXd& v) {
  const auto n = static_cast<double>(v.rows());
  std::vector<double> mean(static_cast<std::size_t>(v.cols())), var(mean.size(), std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index g = 0; g < v.cols(); ++g) {
    const double m = v.col(g).sum() / n;
    mean[static_cast<std::size_t>(g)] = m;
    if (v.rows() > 1) var[static_cast<std::size_t>(g)] = (v.col(g).array() - m).square().sum() / (n - 1.0);
  }
  return {mean, var};
}

inline Table mean_curve_table(const std::vector<double>& grid, const Eigen::MatrixXd& values, const Eigen::MatrixXd& derivs) {
  const auto [mean, var] = column_moments(values);
  const auto dmean = column_moments(derivs).first;
  Table t({"age", "mean", "derivative", "variance"});
  for (std::size_t g = 0; g < grid.size(); ++g) t.add({num(grid[g]), num(mean[g]), num(dmean[g]), num(var[g])});
  return t;
}

/// Pointwise group means of subject curves; labels in first-seen order.
inline Table group_means_table(const std::vector<double>& grid, const std::vector<std::string>& labels,
                               const Eigen::MatrixXd& values, const Eigen::MatrixXd* derivs) {
  std::vector<std::string> order;
  for (const auto& l : labels)
    if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
  Table t({"group", "n", "age", "mean", "derivative"});
  for (const auto& label : order) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) rows.push_back(static_cast<Eigen::Index>(i));
    std::vector<double> mean(grid.size(), 0.0), dmean(grid.size(), 0.0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      for (auto r : rows) {
        mean[g] += values(r, static_cast<Eigen::Index>(g));
        if (derivs) dmean[g] += (*derivs)(r, static_cast<Eigen::Index>(g));
      }
      mean[g] /= static_cast<double>(rows.size());
      dmean[g] /= static_cast<double>(rows.size());
    }
    if (!derivs) dmean = grid_derivative(grid, mean);
    for (std::size_t g = 0; g < grid.size(); ++g)
      t.add({label, std::to_string(rows.size()), num(grid[g]), num(mean[g]), num(dmean[g])});
  }
  return t;
}

inline void write_smooth(StagedOutput& out, const SmoothResult& s) {
  out.write("basis.json", basis_json(s));
  Table coef({"player_id", "lambda", "basis_index", "coefficient"});
  for (const auto& c : s.curves)
    for (std::size_t j = 0; j < c.coefficients.size(); ++j)
      coef.add({c.subject_id, num(c.lambda), std::to_string(j), num(c.coefficients[j])});
  out.write("coefficients.csv", coef);

  const auto values = curve_values(s.curves, s.grid, 0), derivs = curve_values(s.curves, s.grid, 1);
  Table curves({"player_id", "age", "value", "derivative"});
  for (std::size_t i = 0; i < s.curves.size(); ++i)
    for (std::size_t g = 0; g < s.grid.size(); ++g) {
      const auto ii = static_cast<Eigen::Index>(i), gg = static_cast<Eigen::Index>(g);
      curves.add({s.curves[i].subject_id, num(s.grid[g]), num(values(ii, gg)), num(derivs(ii, gg))});
    }
  out.write("curves.csv", curves);

  Table gcv({"scope", "lambda", "gcv", "selected"});
  auto add_sel = [&](const std::string& scope, const LambdaSelection& sel) {
    for (std::size_t i = 0; i < sel.lambda_grid.size(); ++i)
      gcv.add({scope, num(sel.lambda_grid[i]), num(sel.gcv[i]), sel.lambda_grid[i] == sel.lambda ? "1" : "0"});
  };
  if (s.shared) add_sel("cohort", *s.shared);
  for (std::size_t i = 0; i < s.per_subject.size(); ++i) add_sel(s.series[i].id, s.per_subject[i]);
  out.write("gcv.csv", gcv);
  out.write("mean_curve.csv", mean_curve_table(s.grid, values, derivs));
}

// ---------------------------------------------------------------------------
// Scores

struct ScoreSet {
  std::string source;
  std::vector<std::string> ids;
  Eigen::MatrixXd scores;  // N x K
  std::vector<double> eigenvalues;
  std::vector<double> grid, mean;
  std::vector<std::vector<double>> eigenfunctions;  // K x G
  Eigen::MatrixXd curves;  // N x G subject curves on the grid
};

inline Table eigenfunction_table(const std::vector<double>& grid, const std::vector<std::vector<double>>& psi) {
  Table t({"component", "age", "value"});
  for (std::size_t k = 0; k < psi.size(); ++k)
    for (std::size_t g = 0; g < grid.size(); ++g) t.add({std::to_string(k + 1), num(grid[g]), num(psi[k][g])});
  return t;
}

inline Table eigenvalue_table(const std::vector<double>& values, double total) {
  Table t({"component", "eigenvalue", "varex", "cumulative_varex"});
  double cum = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double v = total > 0.0 ? values[k] / total : std::numeric_limits<double>::quiet_NaN();
    cum += v;
    t.add({std::to_string(k + 1), num(values[k]), num(v), num(cum)});
  }
  return t;
}

inline Table score_table(const std::vector<PlayerSeries>& series, const Eigen::MatrixXd& scores) {
  std::vector<std::string> cols{"player_id"};
  for (Eigen::Index k = 0; k < scores.cols(); ++k) cols.push_back("pc" + std::to_string(k + 1));
  Table t(cols);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::string> row{series[i].id};
    for (Eigen::Index k = 0; k < scores.cols(); ++k) row.push_back(num(scores(static_cast<Eigen::Index>(i), k)));
    t.add(std::move(row));
  }
  return t;
}

struct PaceRun {
  PaceModel model;
  Eigen::MatrixXd scores;
  std::size_t regularized = 0;
};

inline PaceRun run_pace(const RunConfig& c, const std::vector<PlayerSeries>& series, std::optional<std::size_t> j) {
  PaceRun r{fit_pace(series, c.pace), {}, 0};
  if (c.pace_components) {
    require(*c.pace_components <= r.model.num_components(), ErrorCode::InvalidArgument,
            "pace.components exceeds the " + std::to_string(r.model.num_components()) + " retained components");
    r.model.set_j_selected(*c.pace_components);
  }
  const std::size_t cols = j ? std::min(*j, r.model.num_components()) : r.model.J_selected();
  require(cols >= 1, ErrorCode::CovarianceUnidentified, "PACE retained no components");
  r.scores = pace_scores(r.model, series, cols, &r.regularized);
  return r;
}

inline Eigen::MatrixXd pace_reconstructions(const PaceModel& model, const Eigen::MatrixXd& scores) {
  const auto& grid = model.grid();
  Eigen::MatrixXd out(scores.rows(), static_cast<Eigen::Index>(grid.size()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::VectorXd row = scores.row(i).transpose();
    const auto v = reconstruct(model, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), grid);
    for (std::size_t g = 0; g < grid.size(); ++g) out(i, static_cast<Eigen::Index>(g)) = v[g];
  }
  return out;
}

/// First `components` scores from the configured source, with subject curves on the source grid.
inline ScoreSet compute_scores(const RunConfig& c, const std::vector<PlayerSeries>& series, std::size_t components) {
  ScoreSet s;
  s.source = c.score_source;
  for (const auto& p : series) s.ids.push_back(p.id);
  if (c.score_source == "pace") {
    auto r = run_pace(c, series, components);
    s.scores = r.scores;
    const auto k = static_cast<std::size_t>(s.scores.cols());
    s.eigenvalues.assign(r.model.eigenvalues().begin(), r.model.eigenvalues().begin() + static_cast<std::ptrdiff_t>(k));
    s.eigenfunctions.assign(r.model.eigenfunctions().begin(),
                            r.model.eigenfunctions().begin() + static_cast<std::ptrdiff_t>(k));
    s.grid = r.model.grid();
    s.mean = r.model.mean();
    s.curves = pace_reconstructions(r.model, s.scores);
  } else {
    const auto sm = smooth_cohort(c, series);
    const auto model = fpca_decompose(sm.curves, sm.grid, 0, 1.0);
    const auto k = std::min(components, model.num_components());
    require(k >= 1, ErrorCode::InsufficientData, "the smoothed curves have no variation");
    s.scores = model.scores.leftCols(static_cast<Eigen::Index>(k));
    s.eigenvalues.assign(model.eigenvalues.begin(), model.eigenvalues.begin() + static_cast<std::ptrdiff_t>(k));
    s.eigenfunctions.assign(model.eigenfunctions.begin(), model.eigenfunctions.begin() + static_cast<std::ptrdiff_t>(k));
    s.grid = sm.grid;
    s.mean = model.mean;
    s.curves = curve_values(sm.curves, sm.grid, 0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_smooth(const RunConfig& c, StagedOutput& out) {
  const auto d = load_dataset(c);
  write_audit(out, d);
  write_smooth(out, smooth_cohort(c, d.series));
}

inline void cmd_fpca(const RunConfig& c, StagedOutput& out) {
  const auto d = load_dataset(c);
  write_audit(out, d);
  const auto sm = smooth_cohort(c, d.series);
  const auto model = fpca_decompose(sm.curves, sm.grid, c.fpca_components, 0.99);
  out.write("basis.json", basis_json(sm));
  out.write("eigenfunctions.csv", eigenfunction_table(model.grid, model.eigenfunctions));
  out.write("eigenvalues.csv", eigenvalue_table(model.eigenvalues, model.total_variance));
  out.write("scores.csv", score_table(sm.series, model.scores));
  Table modes({"component", "age", "mean", "plus", "minus"});
  for (std::size_t k = 0; k < model.num_components(); ++k) {
    const auto [plus, minus] = mode_of_variation(model, k, 2.0);
    for (std::size_t g = 0; g < model.grid.size(); ++g)
      modes.add({std::to_string(k + 1), num(model.grid[g]), num(model.mean[g]), num(plus[g]), num(minus[g])});
  }
  out.write("modes.csv", modes);
  const auto values = curve_values(sm.curves, sm.grid, 0), derivs = curve_values(sm.curves, sm.grid, 1);
  out.write("mean_curve.csv", mean_curve_table(sm.grid, values, derivs));
}

inline void cmd_pace(const RunConfig& c, StagedOutput& out) {
  const auto d = load_dataset(c);
  write_audit(out, d);
  const auto r = run_pace(c, d.series, std::nullopt);
  const auto& m = r.model;
  const auto& grid = m.grid();

  Table mean({"age", "mean", "derivative", "variance"});
  const auto dmean = grid_derivative(grid, m.mean());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto gg = static_cast<Eigen::Index>(g);
    mean.add({num(grid[g]), num(m.mean()[g]), num(dmean[g]), num(m.cov_surface()(gg, gg))});
  }
  out.write("mean_curve.csv", mean);
  out.write("eigenfunctions.csv", eigenfunction_table(grid, m.eigenfunctions()));
  double total = 0.0;
  for (double l : m.eigenvalues()) total += l;
  out.write("eigenvalues.csv", eigenvalue_table(m.eigenvalues(), total));
  out.write("scores.csv", score_table(d.series, r.scores));

  const auto rec = pace_reconstructions(m, r.scores);
  Table recon({"player_id", "age", "value"});
  for (std::size_t i = 0; i < d.series.size(); ++i)
    for (std::size_t g = 0; g < grid.size(); ++g)
      recon.add({d.series[i].id, num(grid[g]), num(rec(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)))});
  out.write("reconstructions.csv", recon);

  const auto& dg = m.diagnostics;
  out.write("diagnostics.json",
            nlohmann::ordered_json{{"subjects", d.series.size()},
                                   {"domain", {m.lo(), m.hi()}},
                                   {"sigma2", jnum(m.sigma2())},
                                   {"sigma2_raw", jnum(dg.sigma2_raw)},
                                   {"score_noise", jnum(m.score_noise())},
                                   {"mean_lambda", jnum(dg.mean_lambda)},
                                   {"cov_bandwidth", jnum(dg.cov_bandwidth)},
                                   {"noise_bandwidth", jnum(dg.noise_bandwidth)},
                                   {"bandwidths", jnums(dg.bandwidths)},
                                   {"cov_cv_error", jnums(dg.cov_cv_error)},
                                   {"raw_pairs", dg.raw_pairs},
                                   {"retained_components", m.num_components()},
                                   {"dropped_eigenvalues", dg.dropped_eigenvalues},
                                   {"loocv_error", jnums(dg.loocv_error)},
                                   {"J_selected", m.J_selected()},
                                   {"regularized_solves", r.regularized}});
}

struct Grouping {
  std::vector<PlayerSeries> series;
  std::vector<std::string> labels;  // per series
  std::pair<std::string, std::string> pair;
};

inline Grouping group_subjects(const RunConfig& c, Dataset& d) {
  Grouping g;
  if (c.test.grouping == "power") {
    const auto split = split_power_groups(d.series, early_iso_by_player(d.records, c.input.schema), c.test.iso_threshold);
    d.exclusions.insert(d.exclusions.end(), split.exclusions.begin(), split.exclusions.end());
    g.pair = {"power", "non_power"};
    for (const auto* part : {&split.power, &split.non_power})
      for (const auto& s : *part) {
        g.series.push_back(s);
        g.labels.push_back(s.meta.at("group"));
      }
    return g;
  }
  std::vector<std::string> seen;
  for (const auto& s : d.series) {
    const auto it = s.meta.find(c.test.group_column);
    if (it == s.meta.end() || it->second.empty()) continue;
    if (std::find(seen.begin(), seen.end(), it->second) == seen.end()) seen.push_back(it->second);
  }
  if (c.test.groups) {
    g.pair = {(*c.test.groups)[0], (*c.test.groups)[1]};
  } else {
    std::sort(seen.begin(), seen.end());
    require(seen.size() == 2, ErrorCode::EmptyGroup,
            "column '" + c.test.group_column + "' has " + std::to_string(seen.size()) +
                " distinct labels; set test.groups to pick two");
    g.pair = {seen[0], seen[1]};
  }
  for (const auto& s : d.series) {
    const auto it = s.meta.find(c.test.group_column);
    if (it == s.meta.end() || it->second.empty()) {
      d.exclusions.push_back({s.id, std::nullopt, std::string(kNoGroupLabel)});
    } else if (it->second != g.pair.first && it->second != g.pair.second) {
      d.exclusions.push_back({s.id, std::nullopt, std::string(kOtherGroup)});
    } else {
      g.series.push_back(s);
      g.labels.push_back(it->second);
    }
  }
  return g;
}

inline void cmd_permtest(const RunConfig& c, StagedOutput& out) {
  auto d = load_dataset(c);
  const auto g = group_subjects(c, d);
  write_audit(out, d);
  std::size_t np = 0, nq = 0;
  for (const auto& l : g.labels) (l == g.pair.first ? np : nq) += 1;
  require(np > 0, ErrorCode::EmptyGroup, "group '" + g.pair.first + "' is empty");
  require(nq > 0, ErrorCode::EmptyGroup, "group '" + g.pair.second + "' is empty");

  const auto s = compute_scores(c, g.series, c.test.components);
  const auto k = s.scores.cols();
  Eigen::MatrixXd p(static_cast<Eigen::Index>(np), k), q(static_cast<Eigen::Index>(nq), k);
  Eigen::Index ip = 0, iq = 0;
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    if (g.labels[i] == g.pair.first) {
      p.row(ip++) = s.scores.row(static_cast<Eigen::Index>(i));
    } else {
      q.row(iq++) = s.scores.row(static_cast<Eigen::Index>(i));
    }
  }
  PermTestOptions opt;
  opt.replications = c.test.replications;
  opt.seed = c.seed;
  opt.strict = c.test.strict;
  opt.exact_threshold = c.test.exact_threshold;
  const auto r = permutation_test(p, q, opt);

  double hi = r.observed_T;
  for (double v : r.null_sample) hi = std::max(hi, v);
  if (!(hi > 0.0)) hi = 1.0;
  const std::size_t bins = c.test.histogram_bins;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : r.null_sample) ++counts[std::min(bins - 1, static_cast<std::size_t>(v / hi * static_cast<double>(bins)))];
  Table hist({"bin", "lower", "upper", "count"});
  for (std::size_t b = 0; b < bins; ++b)
    hist.add({std::to_string(b + 1), num(hi * static_cast<double>(b) / static_cast<double>(bins)),
              num(hi * static_cast<double>(b + 1) / static_cast<double>(bins)), std::to_string(counts[b])});
  out.write("null_histogram.csv", hist);
  Table sample({"replicate", "T"});
  for (std::size_t i = 0; i < r.null_sample.size(); ++i) sample.add({std::to_string(i + 1), num(r.null_sample[i])});
  out.write("null_sample.csv", sample);

  const Eigen::RowVectorXd mp = p.colwise().mean(), mq = q.colwise().mean();
  out.write("permtest.json",
            nlohmann::ordered_json{{"observed_T", jnum(r.observed_T)},
                                   {"p_value", jnum(r.p_value)},
                                   {"replications", r.replications},
                                   {"seed", c.seed},
                                   {"exact", r.exact},
                                   {"strict", r.strict},
                                   {"score_source", s.source},
                                   {"components", k},
                                   {"groups",
                                    {{{"label", g.pair.first},
                                      {"n", np},
                                      {"mean_scores", jnums({mp.data(), mp.data() + mp.size()})}},
                                     {{"label", g.pair.second},
                                      {"n", nq},
                                      {"mean_scores", jnums({mq.data(), mq.data() + mq.size()})}}}}});
  out.write("scores.csv", score_table(g.series, s.scores));
  out.write("group_means.csv", group_means_table(s.grid, g.labels, s.curves, nullptr));
}

inline void cmd_cluster(const RunConfig& c, StagedOutput& out) {
  const auto d = load_dataset(c);
  write_audit(out, d);
  const auto s = compute_scores(c, d.series, c.cluster.components);
  const auto n = static_cast<std::size_t>(s.scores.rows());
  std::vector<std::size_t> ks;
  for (auto k : c.cluster.k_range)
    if (k <= n) ks.push_back(k);
  require(!ks.empty(), ErrorCode::InvalidK, "every k in cluster.k_range exceeds the " + std::to_string(n) + " subjects");
  KMeansOptions opt;
  opt.restarts = c.cluster.restarts;
  opt.max_iterations = c.cluster.max_iterations;
  opt.seed = c.seed;
  const auto rep = cluster_scores(s.scores, ks, c.cluster.runs, opt);
  const auto& sel = rep.selection;

  // Cluster numbers follow first appearance in subject order.
  std::map<std::size_t, std::size_t> relabel;
  for (auto a : rep.fit.assignments) relabel.emplace(a, relabel.size() + 1);
  const std::size_t kk = relabel.size();
  std::vector<std::size_t> sizes(kk, 0);
  std::vector<std::size_t> label(n);
  for (std::size_t i = 0; i < n; ++i) ++sizes[(label[i] = relabel.at(rep.fit.assignments[i])) - 1];

  Table sse({"k", "actual_sse", "null_min_sse", "null_mean_sse", "gap_min", "gap_mean"});
  for (std::size_t j = 0; j < ks.size(); ++j)
    sse.add({std::to_string(ks[j]), num(rep.actual_sse[j]), num(rep.null.min_sse[j]), num(rep.null.mean_sse[j]),
             num(sel.gap_min[j]), num(sel.gap_mean[j])});
  out.write("sse.csv", sse);
  Table null({"run", "k", "sse"});
  for (std::size_t r = 0; r < rep.null.values.size(); ++r)
    for (std::size_t j = 0; j < ks.size(); ++j)
      null.add({std::to_string(r + 1), std::to_string(ks[j]), num(rep.null.values[r][j])});
  out.write("null_sse.csv", null);

  std::vector<std::string> cols{"player_id", "cluster"};
  for (Eigen::Index k = 0; k < s.scores.cols(); ++k) cols.push_back("pc" + std::to_string(k + 1));
  Table assign(cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row{s.ids[i], std::to_string(label[i])};
    for (Eigen::Index k = 0; k < s.scores.cols(); ++k) row.push_back(num(s.scores(static_cast<Eigen::Index>(i), k)));
    assign.add(std::move(row));
  }
  out.write("assignments.csv", assign);

  auto centroids = nlohmann::ordered_json::array();
  Table curves({"cluster", "n", "age", "mean", "derivative"});
  for (const auto& [orig, lab] : relabel) {
    const Eigen::RowVectorXd ctr = rep.fit.centroids.row(static_cast<Eigen::Index>(orig));
    centroids.push_back({{"cluster", lab}, {"size", sizes[lab - 1]}, {"centroid", jnums({ctr.data(), ctr.data() + ctr.size()})}});
  }
  for (std::size_t lab = 1; lab <= kk; ++lab) {
    std::size_t orig = 0;
    for (const auto& [o, l] : relabel)
      if (l == lab) orig = o;
    std::vector<double> curve = s.mean;
    for (std::size_t k = 0; k < s.eigenfunctions.size(); ++k)
      for (std::size_t g = 0; g < s.grid.size(); ++g)
        curve[g] += rep.fit.centroids(static_cast<Eigen::Index>(orig), static_cast<Eigen::Index>(k)) * s.eigenfunctions[k][g];
    const auto dc = grid_derivative(s.grid, curve);
    for (std::size_t g = 0; g < s.grid.size(); ++g)
      curves.add({std::to_string(lab), std::to_string(sizes[lab - 1]), num(s.grid[g]), num(curve[g]), num(dc[g])});
  }
  out.write("cluster_curves.csv", curves);

  std::vector<std::string> labels;
  for (auto l : label) labels.push_back(std::to_string(l));
  out.write("cluster_member_means.csv", group_means_table(s.grid, labels, s.curves, nullptr));

  auto jsizes = nlohmann::ordered_json::array();
  for (auto z : sizes) jsizes.push_back(z);
  out.write("cluster_report.json",
            nlohmann::ordered_json{{"score_source", s.source},
                                   {"components", s.scores.cols()},
                                   {"subjects", n},
                                   {"k_range", ks},
                                   {"runs", rep.runs},
                                   {"restarts", c.cluster.restarts},
                                   {"seed", c.seed},
                                   {"selected_k", sel.selected_k},
                                   {"argmax_min_k", sel.argmax_min_k},
                                   {"disagreement", sel.disagreement},
                                   {"no_structure", sel.no_structure},
                                   {"actual_sse", jnums(rep.actual_sse)},
                                   {"null_min_sse", jnums(rep.null.min_sse)},
                                   {"null_mean_sse", jnums(rep.null.mean_sse)},
                                   {"gap_min", jnums(sel.gap_min)},
                                   {"gap_mean", jnums(sel.gap_mean)},
                                   {"fit", {{"sse", jnum(rep.fit.sse)}, {"iterations", rep.fit.iterations}, {"sizes", jsizes}}},
                                   {"clusters", centroids}});
}

inline void cmd_summary(const RunConfig& c, StagedOutput& out) {
  const auto d = load_dataset(c);
  write_audit(out, d);
  const auto sm = smooth_cohort(c, d.series);
  const auto dom = sm.spec.domain();
  const double frac = c.summary.near_peak_fraction;

  struct Row {
    std::string id;
    double peak_age, peak_value, lo, hi, integral;
  };
  auto summarize_curve = [&](const SmoothedCurve& curve) {
    const Curve f = [&](double t) { return curve(t); };
    const auto [t, v] = peak(f, dom);
    Row r{curve.subject_id, t, v, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
          integral_measure(curve, dom)};
    try {
      std::tie(r.lo, r.hi) = near_peak_interval(f, dom, frac);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NearPeakUndefined) throw;
    }
    return r;
  };

  std::vector<Row> rows;
  for (const auto& curve : sm.curves) rows.push_back(summarize_curve(curve));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].integral > rows[b].integral; });
  std::vector<std::size_t> rank(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i + 1;
  Table table({"player_id", "peak_age", "peak_value", "near_peak_lo", "near_peak_hi", "integral", "integral_rank"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    table.add({r.id, num(r.peak_age), num(r.peak_value), num(r.lo), num(r.hi), num(r.integral), std::to_string(rank[i])});
  }
  out.write("curve_summary.csv", table);

  // The mean of the fitted curves is itself a spline on the shared basis.
  SmoothedCurve mean_fit{sm.spec, std::vector<double>(sm.spec.dimension(), 0.0), 0.0, "mean"};
  for (const auto& cv : sm.curves)
    for (std::size_t j = 0; j < cv.coefficients.size(); ++j)
      mean_fit.coefficients[j] += cv.coefficients[j] / static_cast<double>(sm.curves.size());
  const auto m = summarize_curve(mean_fit);
  out.write("summary.json",
            nlohmann::ordered_json{{"subjects", sm.curves.size()},
                                   {"domain", {dom.first, dom.second}},
                                   {"near_peak_fraction", frac},
                                   {"mean_curve",
                                    {{"peak_age", jnum(m.peak_age)},
                                     {"peak_value", jnum(m.peak_value)},
                                     {"near_peak", {jnum(m.lo), jnum(m.hi)}},
                                     {"integral", jnum(m.integral)}}}});

  const auto values = curve_values(sm.curves, sm.grid, 0), derivs = curve_values(sm.curves, sm.grid, 1);
  out.write("mean_curve.csv", mean_curve_table(sm.grid, values, derivs));
  if (c.summary.group_column) {
    std::vector<std::string> labels;
    for (const auto& s : d.series) {
      const auto it = s.meta.find(*c.summary.group_column);
      labels.push_back(it == s.meta.end() || it->second.empty() ? "NA" : it->second);
    }
    out.write("group_means.csv", group_means_table(sm.grid, labels, values, &derivs));
  }
}

inline void cmd_simulate(const RunConfig& c, StagedOutput& out) {
  const auto& cfg = c.simulate;
  const auto sim = simulate_cohort(cfg);
  Table data({"player_id", "season_year", "age", "value", "group"});
  for (const auto& s : sim.series)
    for (std::size_t j = 0; j < s.times.size(); ++j)
      data.add({s.id, std::to_string(2000 + static_cast<int>(j)), num(s.times[j]), num(s.values[j]), s.meta.at("group")});
  out.write("data.csv", data);

  const auto grid = linspace(cfg.domain.first, cfg.domain.second, c.grid_size);
  std::vector<double> mean;
  for (double t : grid) mean.push_back(sim_mean(cfg, t));
  auto psi = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < cfg.eigenvalues.size(); ++k) {
    std::vector<double> v;
    for (double t : grid) v.push_back(sim_eigenfunction(cfg, k, t));
    psi.push_back(jnums(v));
  }
  auto subjects = nlohmann::ordered_json::array();
  Table truth({"player_id", "age", "value"});
  for (std::size_t i = 0; i < sim.series.size(); ++i) {
    const auto& s = sim.series[i];
    const double shift = s.meta.at("group") == "B" ? cfg.group_shift : 0.0;
    subjects.push_back({{"player_id", s.id}, {"group", s.meta.at("group")}, {"scores", jnums(sim.scores[i])}});
    for (double t : grid) truth.add({s.id, num(t), num(sim_truth(cfg, sim.scores[i], t) + shift)});
  }
  out.write("truth_curves.csv", truth);
  out.write("truth.json", nlohmann::ordered_json{{"seed", cfg.seed},
                                                 {"domain", {cfg.domain.first, cfg.domain.second}},
                                                 {"noise_sd", cfg.noise_sd},
                                                 {"sigma2", cfg.noise_sd * cfg.noise_sd},
                                                 {"eigenvalues", jnums(cfg.eigenvalues)},
                                                 {"group_shift", cfg.group_shift},
                                                 {"grid", jnums(grid)},
                                                 {"mean", jnums(mean)},
                                                 {"eigenfunctions", psi},
                                                 {"subjects", subjects}});
}

/// Validates the resolved config, runs one subcommand into a staged
/// directory and promotes it. Returns the output directory.
inline std::filesystem::path run(const std::string& subcommand, const nlohmann::ordered_json& resolved) {
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end())
    throw ConfigError("subcommand", "unknown subcommand '" + subcommand + "'");
  const RunConfig c = parse_run_config(resolved);
  if (subcommand != "simulate") {
    if (!c.input.path) throw ConfigError("input.path", "required by '" + subcommand + "'");
    if (!std::filesystem::is_regular_file(*c.input.path))
      throw ConfigError("input.path", "'" + *c.input.path + "' is not a readable file");
  }
  StagedOutput out(c.output);
  if (subcommand == "smooth") cmd_smooth(c, out);
  if (subcommand == "fpca") cmd_fpca(c, out);
  if (subcommand == "pace") cmd_pace(c, out);
  if (subcommand == "permtest") cmd_permtest(c, out);
  if (subcommand == "cluster") cmd_cluster(c, out);
  if (subcommand == "summary") cmd_summary(c, out);
  if (subcommand == "simulate") cmd_simulate(c, out);
  out.commit(make_manifest(subcommand, c.seed, resolved));
  return out.target();
}

}  // namespace agecurve::app

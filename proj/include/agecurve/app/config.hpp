#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "agecurve/cluster.hpp"
#include "agecurve/error.hpp"
#include "agecurve/ingest.hpp"
#include "agecurve/pace.hpp"
#include "agecurve/quadrature.hpp"
#include "agecurve/simulate.hpp"

namespace agecurve::app {

using json = nlohmann::ordered_json;

struct ConfigIssue {
  std::string path;
  std::string message;
};

/// Invalid configuration; carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues)
      : std::runtime_error(summary(issues)), issues_(std::move(issues)) {}
  ConfigError(std::string path, std::string message)
      : ConfigError(std::vector<ConfigIssue>{{std::move(path), std::move(message)}}) {}

  [[nodiscard]] const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

 private:
  static std::string summary(const std::vector<ConfigIssue>& issues) {
    std::string s = "invalid configuration";
    for (const auto& i : issues) s += "\n  " + (i.path.empty() ? std::string("<root>") : i.path) + ": " + i.message;
    return s;
  }
  std::vector<ConfigIssue> issues_;
};

/// Every recognised key with its default. A null default accepts any value
/// of the documented type.
inline json default_config() {
  const PaceConfig pace;
  const CsvSchema schema;
  json k_range = json::array();
  for (int k = 1; k <= 10; ++k) k_range.push_back(k);
  return json{
      {"seed", 1},
      {"output", "agecurve_out"},
      {"input",
       {{"path", nullptr},
        {"schema",
         {{"player_id", schema.player_id},
          {"season_year", schema.season_year},
          {"age", schema.age},
          {"value", schema.value},
          {"exposure", schema.exposure},
          {"slg", schema.slg},
          {"avg", schema.avg},
          {"position", schema.position},
          {"birth_date", schema.birth_date}}},
        {"cohort", "none"},
        {"mlb", {{"min_exposure", 200.0}, {"min_year", 1920}, {"age_lo", 24}, {"age_hi", 36}, {"strict_window", false}}},
        {"nba", {{"min_seasons", 8}, {"age_lo", 19}, {"age_hi", 39}}}}},
      {"basis", {{"degree", 3}, {"interior_knots", nullptr}, {"knot_count", 8}, {"domain", nullptr}}},
      {"smoothing",
       {{"lambda", nullptr}, {"lambda_grid", {{"lo", 1e-4}, {"hi", 1e6}, {"count", 41}}}, {"shared", true}, {"demean", false}}},
      {"grid", {{"size", 201}}},
      {"fpca", {{"components", 3}}},
      {"pace",
       {{"domain", nullptr},
        {"grid_size", pace.grid_size},
        {"mean_degree", pace.mean_degree},
        {"mean_interior_knots", pace.mean_interior_knots},
        {"bandwidth_fractions", pace.bandwidth_fractions},
        {"cv_folds", pace.cv_folds},
        {"central_fraction", pace.central_fraction},
        {"max_gap_fraction", pace.max_gap_fraction},
        {"score_noise_floor", pace.score_noise_floor},
        {"j_max", pace.j_max},
        {"components", nullptr}}},
      {"scores", {{"source", "pace"}}},
      {"test",
       {{"replications", 5000},
        {"strict", false},
        {"exact_threshold", 10},
        {"components", 1},
        {"grouping", "column"},
        {"group_column", "group"},
        {"groups", nullptr},
        {"iso_threshold", 0.150},
        {"histogram_bins", 50}}},
      {"cluster", {{"k_range", k_range}, {"runs", 250}, {"restarts", 25}, {"components", 3}, {"max_iterations", 300}}},
      {"summary", {{"near_peak_fraction", 0.10}, {"group_column", nullptr}}},
      {"simulate",
       {{"domain", {19.0, 39.0}},
        {"subjects", 200},
        {"min_obs", 3},
        {"max_obs", 8},
        {"integer_times", false},
        {"eigenvalues", {2.0, 0.5}},
        {"noise_sd", 0.5},
        {"mean_level", 1.0},
        {"mean_amplitude", 1.0},
        {"group_shift", 0.0}}},
  };
}

namespace detail {

inline void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

inline void unknown_keys(const json& cfg, const json& defaults, const std::string& prefix, std::vector<ConfigIssue>& out) {
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) {
      out.push_back({path, "unknown key"});
    } else if (defaults[it.key()].is_object()) {
      if (it.value().is_object()) {
        unknown_keys(it.value(), defaults[it.key()], path, out);
      } else {
        out.push_back({path, "expected an object"});
      }
    }
  }
}

}  // namespace detail

/// Parses `key.path=value`; the value is read as JSON when it parses, else as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  json cfg = json::parse(in, nullptr, false, true);
  if (cfg.is_discarded()) throw ConfigError("--config", "'" + path.string() + "' is not valid JSON");
  if (!cfg.is_object()) throw ConfigError("--config", "top level must be a JSON object");
  return cfg;
}

/// Defaults, then the file, then overrides; unknown keys are errors.
inline json resolve_config(const json& user, const std::vector<std::string>& overrides) {
  json patch = user;
  for (const auto& o : overrides) apply_override(patch, o);
  const json defaults = default_config();
  std::vector<ConfigIssue> issues;
  detail::unknown_keys(patch, defaults, "", issues);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  json resolved = defaults;
  detail::merge_into(resolved, patch);
  return resolved;
}

struct InputConfig {
  std::optional<std::string> path;
  CsvSchema schema;
  std::string cohort = "none";
  MlbCohortOptions mlb;
  NbaCohortOptions nba;
};

struct BasisConfig {
  int degree = 3;
  std::optional<std::vector<double>> interior_knots;
  std::size_t knot_count = 8;
  std::optional<std::pair<double, double>> domain;
};

struct SmoothingConfig {
  std::optional<double> lambda;
  std::vector<double> lambda_grid;
  bool shared = true;
  bool demean = false;
};

struct TestConfig {
  std::size_t replications = 5000;
  bool strict = false;
  std::size_t exact_threshold = 10;
  std::size_t components = 1;
  std::string grouping = "column";
  std::string group_column = "group";
  std::optional<std::vector<std::string>> groups;
  double iso_threshold = 0.150;
  std::size_t histogram_bins = 50;
};

struct ClusterConfig {
  std::vector<std::size_t> k_range;
  std::size_t runs = 250;
  std::size_t restarts = 25;
  std::size_t components = 3;
  std::size_t max_iterations = 300;
};

struct SummaryConfig {
  double near_peak_fraction = 0.10;
  std::optional<std::string> group_column;
};

/// Typed view of a resolved configuration.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output;
  InputConfig input;
  BasisConfig basis;
  SmoothingConfig smoothing;
  std::size_t grid_size = 201;
  std::size_t fpca_components = 3;
  PaceConfig pace;
  std::optional<std::size_t> pace_components;
  std::string score_source = "pace";
  TestConfig test;
  ClusterConfig cluster;
  SummaryConfig summary;
  SimulationConfig simulate;
};

namespace detail {

// Reads typed values by dotted path, collecting problems instead of throwing.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  [[nodiscard]] const json* find(const std::string& path) const {
    const json* node = &root_;
    std::size_t start = 0;
    for (;;) {
      const auto dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
      if (dot == std::string::npos) return node;
      start = dot + 1;
    }
  }

  void fail(const std::string& path, const std::string& message) { issues_.push_back({path, message}); }

  template <typename T>
  T get(const std::string& path, T fallback) {
    const json* node = find(path);
    if (!node || node->is_null()) return fallback;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!node->is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!node->is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (node->is_number_integer() && node->get<long long>() < 0) throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!node->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!node->is_string()) throw std::invalid_argument("expected a string");
      }
      return node->get<T>();
    } catch (const std::exception& e) {
      fail(path, e.what());
      return fallback;
    }
  }

  template <typename T>
  std::optional<T> optional(const std::string& path) {
    const json* node = find(path);
    if (!node || node->is_null()) return std::nullopt;
    return get<T>(path, T{});
  }

  std::vector<double> numbers(const std::string& path, std::vector<double> fallback) {
    const json* node = find(path);
    if (!node || node->is_null()) return fallback;
    if (!node->is_array()) {
      fail(path, "expected an array of numbers");
      return fallback;
    }
    std::vector<double> out;
    for (const auto& v : *node) {
      if (!v.is_number()) {
        fail(path, "expected an array of numbers");
        return fallback;
      }
      out.push_back(v.get<double>());
    }
    return out;
  }

  std::optional<std::vector<std::string>> strings(const std::string& path) {
    const json* node = find(path);
    if (!node || node->is_null()) return std::nullopt;
    std::vector<std::string> out;
    if (node->is_array()) {
      for (const auto& v : *node) {
        if (!v.is_string()) break;
        out.push_back(v.get<std::string>());
      }
      if (out.size() == node->size()) return out;
    }
    fail(path, "expected an array of strings");
    return std::nullopt;
  }

  std::optional<std::pair<double, double>> interval(const std::string& path) {
    const json* node = find(path);
    if (!node || node->is_null()) return std::nullopt;
    const auto v = numbers(path, {});
    if (v.size() != 2 || !(v[0] < v[1])) {
      fail(path, "expected [lo, hi] with lo < hi");
      return std::nullopt;
    }
    return std::pair{v[0], v[1]};
  }

  void check(bool ok, const std::string& path, const std::string& message) {
    if (!ok) fail(path, message);
  }

  [[nodiscard]] std::vector<ConfigIssue> take() { return std::move(issues_); }

 private:
  const json& root_;
  std::vector<ConfigIssue> issues_;
};

}  // namespace detail

inline RunConfig parse_run_config(const json& resolved) {
  detail::Reader r(resolved);
  RunConfig c;
  c.seed = r.get<std::uint64_t>("seed", 1);
  c.output = r.get<std::string>("output", "agecurve_out");
  r.check(!c.output.empty(), "output", "must not be empty");

  auto& in = c.input;
  in.path = r.optional<std::string>("input.path");
  for (auto [field, key] : {std::pair{&in.schema.player_id, "player_id"}, std::pair{&in.schema.season_year, "season_year"},
                            std::pair{&in.schema.age, "age"}, std::pair{&in.schema.value, "value"},
                            std::pair{&in.schema.exposure, "exposure"}, std::pair{&in.schema.slg, "slg"},
                            std::pair{&in.schema.avg, "avg"}, std::pair{&in.schema.position, "position"},
                            std::pair{&in.schema.birth_date, "birth_date"}}) {
    *field = r.get<std::string>(std::string("input.schema.") + key, *field);
  }
  in.cohort = r.get<std::string>("input.cohort", "none");
  r.check(in.cohort == "none" || in.cohort == "mlb" || in.cohort == "nba", "input.cohort", "must be none, mlb or nba");
  in.mlb.min_exposure = r.get<double>("input.mlb.min_exposure", in.mlb.min_exposure);
  in.mlb.min_year = r.get<int>("input.mlb.min_year", in.mlb.min_year);
  in.mlb.age_lo = r.get<int>("input.mlb.age_lo", in.mlb.age_lo);
  in.mlb.age_hi = r.get<int>("input.mlb.age_hi", in.mlb.age_hi);
  in.mlb.strict_window = r.get<bool>("input.mlb.strict_window", false);
  r.check(in.mlb.age_lo < in.mlb.age_hi, "input.mlb", "age_lo must be < age_hi");
  in.nba.min_seasons = r.get<std::size_t>("input.nba.min_seasons", in.nba.min_seasons);
  in.nba.age_lo = r.get<int>("input.nba.age_lo", in.nba.age_lo);
  in.nba.age_hi = r.get<int>("input.nba.age_hi", in.nba.age_hi);
  r.check(in.nba.age_lo < in.nba.age_hi, "input.nba", "age_lo must be < age_hi");

  auto& b = c.basis;
  b.degree = r.get<int>("basis.degree", 3);
  r.check(b.degree >= 1 && b.degree <= 5, "basis.degree", "must lie in 1..5");
  if (r.find("basis.interior_knots") && !r.find("basis.interior_knots")->is_null()) {
    b.interior_knots = r.numbers("basis.interior_knots", {});
  }
  b.knot_count = r.get<std::size_t>("basis.knot_count", 8);
  b.domain = r.interval("basis.domain");

  auto& s = c.smoothing;
  s.lambda = r.optional<double>("smoothing.lambda");
  if (s.lambda) r.check(*s.lambda >= 0.0, "smoothing.lambda", "must be >= 0");
  const double lo = r.get<double>("smoothing.lambda_grid.lo", 1e-4), hi = r.get<double>("smoothing.lambda_grid.hi", 1e6);
  const auto count = r.get<std::size_t>("smoothing.lambda_grid.count", 41);
  r.check(lo > 0.0 && hi >= lo && count >= 1, "smoothing.lambda_grid", "needs 0 < lo <= hi and count >= 1");
  if (lo > 0.0 && hi >= lo && count >= 1) s.lambda_grid = count == 1 ? std::vector<double>{lo} : logspace(lo, hi, count);
  s.shared = r.get<bool>("smoothing.shared", true);
  s.demean = r.get<bool>("smoothing.demean", false);

  c.grid_size = r.get<std::size_t>("grid.size", 201);
  r.check(c.grid_size >= 3, "grid.size", "must be >= 3");
  c.fpca_components = r.get<std::size_t>("fpca.components", 3);

  auto& p = c.pace;
  p.domain = r.interval("pace.domain");
  p.grid_size = r.get<std::size_t>("pace.grid_size", p.grid_size);
  p.mean_degree = r.get<int>("pace.mean_degree", p.mean_degree);
  p.mean_interior_knots = r.get<std::size_t>("pace.mean_interior_knots", p.mean_interior_knots);
  p.bandwidth_fractions = r.numbers("pace.bandwidth_fractions", p.bandwidth_fractions);
  p.cv_folds = r.get<std::size_t>("pace.cv_folds", p.cv_folds);
  p.central_fraction = r.get<double>("pace.central_fraction", p.central_fraction);
  p.max_gap_fraction = r.get<double>("pace.max_gap_fraction", p.max_gap_fraction);
  p.score_noise_floor = r.get<double>("pace.score_noise_floor", p.score_noise_floor);
  p.j_max = r.get<std::size_t>("pace.j_max", p.j_max);
  p.seed = c.seed;
  try {
    check_pace_config(p);
  } catch (const Error& e) {
    r.fail("pace", e.what());
  }
  c.pace_components = r.optional<std::size_t>("pace.components");
  if (c.pace_components) r.check(*c.pace_components >= 1, "pace.components", "must be >= 1");

  c.score_source = r.get<std::string>("scores.source", "pace");
  r.check(c.score_source == "pace" || c.score_source == "fpca", "scores.source", "must be pace or fpca");

  auto& t = c.test;
  t.replications = r.get<std::size_t>("test.replications", t.replications);
  r.check(t.replications >= 1, "test.replications", "must be >= 1");
  t.strict = r.get<bool>("test.strict", false);
  t.exact_threshold = r.get<std::size_t>("test.exact_threshold", t.exact_threshold);
  t.components = r.get<std::size_t>("test.components", 1);
  r.check(t.components >= 1, "test.components", "must be >= 1");
  t.grouping = r.get<std::string>("test.grouping", "column");
  r.check(t.grouping == "column" || t.grouping == "power", "test.grouping", "must be column or power");
  t.group_column = r.get<std::string>("test.group_column", "group");
  t.groups = r.strings("test.groups");
  if (t.groups) r.check(t.groups->size() == 2 && (*t.groups)[0] != (*t.groups)[1], "test.groups", "needs two distinct labels");
  t.iso_threshold = r.get<double>("test.iso_threshold", 0.150);
  t.histogram_bins = r.get<std::size_t>("test.histogram_bins", 50);
  r.check(t.histogram_bins >= 1, "test.histogram_bins", "must be >= 1");

  auto& k = c.cluster;
  if (const json* node = r.find("cluster.k_range"); node && node->is_array()) {
    for (const auto& v : *node) {
      if (v.is_number_integer() && v.get<long long>() >= 1) {
        k.k_range.push_back(v.get<std::size_t>());
      } else {
        r.fail("cluster.k_range", "expected positive integers");
        break;
      }
    }
  } else {
    r.fail("cluster.k_range", "expected an array of positive integers");
  }
  r.check(!k.k_range.empty() && std::is_sorted(k.k_range.begin(), k.k_range.end()) &&
              std::adjacent_find(k.k_range.begin(), k.k_range.end()) == k.k_range.end(),
          "cluster.k_range", "must be non-empty and strictly increasing");
  k.runs = r.get<std::size_t>("cluster.runs", k.runs);
  k.restarts = r.get<std::size_t>("cluster.restarts", k.restarts);
  k.components = r.get<std::size_t>("cluster.components", k.components);
  k.max_iterations = r.get<std::size_t>("cluster.max_iterations", k.max_iterations);
  r.check(k.runs >= 1, "cluster.runs", "must be >= 1");
  r.check(k.restarts >= 1, "cluster.restarts", "must be >= 1");
  r.check(k.components >= 1, "cluster.components", "must be >= 1");
  r.check(k.max_iterations >= 1, "cluster.max_iterations", "must be >= 1");

  c.summary.near_peak_fraction = r.get<double>("summary.near_peak_fraction", 0.10);
  r.check(c.summary.near_peak_fraction > 0.0 && c.summary.near_peak_fraction < 1.0, "summary.near_peak_fraction",
          "must lie in (0, 1)");
  c.summary.group_column = r.optional<std::string>("summary.group_column");

  auto& sim = c.simulate;
  if (auto d = r.interval("simulate.domain")) sim.domain = *d;
  sim.subjects = r.get<std::size_t>("simulate.subjects", sim.subjects);
  sim.min_obs = r.get<std::size_t>("simulate.min_obs", sim.min_obs);
  sim.max_obs = r.get<std::size_t>("simulate.max_obs", sim.max_obs);
  sim.integer_times = r.get<bool>("simulate.integer_times", false);
  sim.eigenvalues = r.numbers("simulate.eigenvalues", sim.eigenvalues);
  sim.noise_sd = r.get<double>("simulate.noise_sd", sim.noise_sd);
  sim.mean_level = r.get<double>("simulate.mean_level", sim.mean_level);
  sim.mean_amplitude = r.get<double>("simulate.mean_amplitude", sim.mean_amplitude);
  sim.group_shift = r.get<double>("simulate.group_shift", sim.group_shift);
  sim.seed = c.seed;
  r.check(sim.subjects >= 1, "simulate.subjects", "must be >= 1");
  r.check(sim.min_obs >= 1 && sim.min_obs <= sim.max_obs, "simulate", "needs 1 <= min_obs <= max_obs");
  r.check(sim.noise_sd >= 0.0, "simulate.noise_sd", "must be >= 0");
  for (double l : sim.eigenvalues) r.check(l >= 0.0, "simulate.eigenvalues", "must be >= 0");

  auto issues = r.take();
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

}  // namespace agecurve::app

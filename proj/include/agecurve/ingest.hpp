#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "agecurve/error.hpp"
#include "agecurve/smooth.hpp"

namespace agecurve {

/// Header names for the fields the toolkit reads.
struct CsvSchema {
  std::string player_id = "player_id";
  std::string season_year = "season_year";
  std::string age = "age";
  std::string value = "value";
  std::string exposure = "pa";
  std::string slg = "slg";
  std::string avg = "avg";
  std::string position = "position";
  std::string birth_date = "birth_date";
};

struct SeasonRecord {
  std::string player_id;
  int season_year = 0;
  double age = 0.0;
  double value = 0.0;
  std::optional<double> exposure;
  std::map<std::string, std::string> extra;  // every other column, by header name

  [[nodiscard]] std::optional<double> number(const std::string& key) const;
};

struct RejectedRow {
  std::size_t row = 0;  // 1-based line number in the file
  std::string reason;
};

struct LoadResult {
  std::vector<SeasonRecord> records;
  std::vector<RejectedRow> rejects;
  std::vector<std::string> header;
};

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Splits one CSV record (RFC 4180 quoting). Returns false on an unterminated quote.
inline bool split_csv_line(const std::string& line, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return !quoted;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::optional<double> SeasonRecord::number(const std::string& key) const {
  const auto it = extra.find(key);
  if (it == extra.end()) return std::nullopt;
  return detail::parse_double(it->second);
}

inline LoadResult parse_csv(std::istream& in, const CsvSchema& schema = {}) {
  LoadResult out;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::SchemaError, "missing header row");
  require(detail::split_csv_line(line, out.header), ErrorCode::SchemaError, "malformed header row");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < out.header.size(); ++i) col.emplace(out.header[i], i);
  auto required = [&](const std::string& name) {
    const auto it = col.find(name);
    require(it != col.end(), ErrorCode::SchemaError, "missing required column '" + name + "'");
    return it->second;
  };
  const std::size_t c_id = required(schema.player_id), c_year = required(schema.season_year),
                    c_age = required(schema.age), c_value = required(schema.value);
  constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  const std::size_t c_pa = col.count(schema.exposure) ? col.at(schema.exposure) : kAbsent;

  std::vector<std::string> fields;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto reject = [&](std::string why) { out.rejects.push_back({lineno, std::move(why)}); };
    if (!detail::split_csv_line(line, fields)) {
      reject("unterminated quote");
      continue;
    }
    if (fields.size() != out.header.size()) {
      reject("expected " + std::to_string(out.header.size()) + " fields, found " + std::to_string(fields.size()));
      continue;
    }
    SeasonRecord r;
    r.player_id = fields[c_id];
    if (r.player_id.empty()) {
      reject("empty " + schema.player_id);
      continue;
    }
    const auto year = detail::parse_int(fields[c_year]);
    if (!year || *year < 1871) {
      reject("invalid " + schema.season_year + " '" + fields[c_year] + "'");
      continue;
    }
    const auto age = detail::parse_double(fields[c_age]);
    if (!age || *age <= 0.0) {
      reject("invalid " + schema.age + " '" + fields[c_age] + "'");
      continue;
    }
    const auto value = detail::parse_double(fields[c_value]);
    if (!value) {
      reject("invalid " + schema.value + " '" + fields[c_value] + "'");
      continue;
    }
    if (c_pa != kAbsent && !fields[c_pa].empty()) {
      const auto pa = detail::parse_double(fields[c_pa]);
      if (!pa || *pa < 0.0) {
        reject("invalid " + schema.exposure + " '" + fields[c_pa] + "'");
        continue;
      }
      r.exposure = pa;
    }
    r.season_year = *year;
    r.age = *age;
    r.value = *value;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == c_id || i == c_year || i == c_age || i == c_value || i == c_pa) continue;
      r.extra.emplace(out.header[i], fields[i]);
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

inline LoadResult load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open '" + path.string() + "'");
  return parse_csv(in, schema);
}

/// Writes records with the core columns first, then the union of extra columns in sorted order.
inline void write_csv(std::ostream& out, const std::vector<SeasonRecord>& records, const CsvSchema& schema = {}) {
  std::set<std::string> extras;
  for (const auto& r : records)
    for (const auto& [k, v] : r.extra) extras.insert(k);
  out << detail::csv_escape(schema.player_id) << ',' << detail::csv_escape(schema.season_year) << ','
      << detail::csv_escape(schema.age) << ',' << detail::csv_escape(schema.value) << ','
      << detail::csv_escape(schema.exposure);
  for (const auto& k : extras) out << ',' << detail::csv_escape(k);
  out << '\n';
  for (const auto& r : records) {
    out << detail::csv_escape(r.player_id) << ',' << r.season_year << ',' << detail::format_double(r.age) << ','
        << detail::format_double(r.value) << ',' << (r.exposure ? detail::format_double(*r.exposure) : "");
    for (const auto& k : extras) {
      const auto it = r.extra.find(k);
      out << ',' << (it == r.extra.end() ? "" : detail::csv_escape(it->second));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Cohort filters

namespace reason {
inline constexpr std::string_view kBeforeMinYear = "BEFORE_MIN_YEAR";
inline constexpr std::string_view kLowExposure = "LOW_EXPOSURE";
inline constexpr std::string_view kMissingExposure = "MISSING_EXPOSURE";
inline constexpr std::string_view kAgeOutOfRange = "AGE_OUT_OF_RANGE";
inline constexpr std::string_view kDuplicateAge = "DUPLICATE_AGE";
inline constexpr std::string_view kNoCoverage = "NO_COVERAGE";
inline constexpr std::string_view kAgeGap = "AGE_GAP";
inline constexpr std::string_view kFewSeasons = "FEW_SEASONS";
inline constexpr std::string_view kNoIsoData = "NO_ISO_DATA";
}  // namespace reason

/// One excluded season row, or a whole player when season_year is empty.
struct Exclusion {
  std::string player_id;
  std::optional<int> season_year;
  std::string reason_code;

  bool operator==(const Exclusion&) const = default;
};

struct CohortResult {
  std::vector<PlayerSeries> series;
  std::vector<Exclusion> exclusions;
  std::map<int, std::size_t> age_counts;  // measurements per integer age among retained players
};

inline void write_exclusions(std::ostream& out, const std::vector<Exclusion>& exclusions) {
  out << "player_id,season_year,reason_code\n";
  for (const auto& e : exclusions) {
    out << detail::csv_escape(e.player_id) << ',' << (e.season_year ? std::to_string(*e.season_year) : "") << ','
        << e.reason_code << '\n';
  }
}

namespace detail {

inline int whole_age(double age) { return static_cast<int>(std::floor(age + 1e-9)); }

// Groups rows by player (in first-appearance order), sorted by age; later
// rows repeating an age are excluded.
inline std::vector<std::pair<std::string, std::vector<SeasonRecord>>> group_by_player(
    const std::vector<SeasonRecord>& records, std::vector<Exclusion>& exclusions) {
  std::vector<std::pair<std::string, std::vector<SeasonRecord>>> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, fresh] = index.emplace(r.player_id, groups.size());
    if (fresh) groups.emplace_back(r.player_id, std::vector<SeasonRecord>{});
    auto& rows = groups[it->second].second;
    const bool dup = std::any_of(rows.begin(), rows.end(), [&](const SeasonRecord& o) { return o.age == r.age; });
    if (dup) {
      exclusions.push_back({r.player_id, r.season_year, std::string(reason::kDuplicateAge)});
    } else {
      rows.push_back(r);
    }
  }
  for (auto& [id, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(), [](const SeasonRecord& a, const SeasonRecord& b) { return a.age < b.age; });
  }
  return groups;
}

inline PlayerSeries to_series(const std::string& id, const std::vector<SeasonRecord>& rows) {
  PlayerSeries s;
  s.id = id;
  for (const auto& r : rows) {
    s.times.push_back(r.age);
    s.values.push_back(r.value);
  }
  if (!rows.empty()) s.meta = rows.front().extra;
  return s;
}

}  // namespace detail

struct MlbCohortOptions {
  double min_exposure = 200.0;
  int min_year = 1920;
  int age_lo = 24;
  int age_hi = 36;
  bool strict_window = false;  // apply the gap rule to the whole age window, not the observed span
};

/// True when no two consecutive whole ages are missing from `ages` within
/// [lo, hi] (strict) or within the observed span clipped to [lo, hi].
inline bool passes_gap_rule(const std::set<int>& ages, int lo, int hi, bool strict) {
  if (ages.empty()) return false;
  const int from = strict ? lo : std::max(lo, *ages.begin());
  const int to = strict ? hi : std::min(hi, *ages.rbegin());
  for (int a = from; a < to; ++a) {
    if (!ages.count(a) && !ages.count(a + 1)) return false;
  }
  return true;
}

/// Season rows from `min_year` on; the rest are reported.
inline std::vector<SeasonRecord> filter_min_year(const std::vector<SeasonRecord>& records, int min_year,
                                                 std::vector<Exclusion>& exclusions) {
  std::vector<SeasonRecord> kept;
  for (const auto& r : records) {
    if (r.season_year >= min_year) {
      kept.push_back(r);
    } else {
      exclusions.push_back({r.player_id, r.season_year, std::string(reason::kBeforeMinYear)});
    }
  }
  return kept;
}

/// Season rows with exposure of at least `min_exposure`; rows without an exposure value are dropped too.
inline std::vector<SeasonRecord> filter_min_exposure(const std::vector<SeasonRecord>& records, double min_exposure,
                                                     std::vector<Exclusion>& exclusions) {
  std::vector<SeasonRecord> kept;
  for (const auto& r : records) {
    if (r.exposure && *r.exposure >= min_exposure) {
      kept.push_back(r);
    } else {
      exclusions.push_back(
          {r.player_id, r.season_year, std::string(r.exposure ? reason::kLowExposure : reason::kMissingExposure)});
    }
  }
  return kept;
}

/// Season-level era and exposure filters, then the per-player coverage rule
/// on the age window.
inline CohortResult filter_mlb_cohort(const std::vector<SeasonRecord>& records, const MlbCohortOptions& opt = {}) {
  CohortResult out;
  const auto eligible = filter_min_exposure(filter_min_year(records, opt.min_year, out.exclusions), opt.min_exposure,
                                            out.exclusions);
  std::vector<SeasonRecord> kept;
  for (const auto& r : eligible) {
    const int a = detail::whole_age(r.age);
    if (a < opt.age_lo || a > opt.age_hi) {
      out.exclusions.push_back({r.player_id, r.season_year, std::string(reason::kAgeOutOfRange)});
    } else {
      kept.push_back(r);
    }
  }
  for (const auto& [id, rows] : detail::group_by_player(kept, out.exclusions)) {
    std::set<int> ages;
    for (const auto& r : rows) ages.insert(detail::whole_age(r.age));
    if (!passes_gap_rule(ages, opt.age_lo, opt.age_hi, opt.strict_window)) {
      out.exclusions.push_back({id, std::nullopt, std::string(reason::kAgeGap)});
      continue;
    }
    for (int a : ages) ++out.age_counts[a];
    out.series.push_back(detail::to_series(id, rows));
  }
  return out;
}

struct NbaCohortOptions {
  std::size_t min_seasons = 8;
  int age_lo = 19;
  int age_hi = 39;
};

/// Keeps players with enough seasons, then clips their rows to the age window.
inline CohortResult filter_nba_cohort(const std::vector<SeasonRecord>& records, const NbaCohortOptions& opt = {}) {
  CohortResult out;
  for (const auto& [id, rows] : detail::group_by_player(records, out.exclusions)) {
    if (rows.size() < opt.min_seasons) {
      out.exclusions.push_back({id, std::nullopt, std::string(reason::kFewSeasons)});
      continue;
    }
    std::vector<SeasonRecord> clipped;
    for (const auto& r : rows) {
      const int a = detail::whole_age(r.age);
      if (a < opt.age_lo || a > opt.age_hi) {
        out.exclusions.push_back({id, r.season_year, std::string(reason::kAgeOutOfRange)});
      } else {
        clipped.push_back(r);
        ++out.age_counts[a];
      }
    }
    if (clipped.empty()) {
      out.exclusions.push_back({id, std::nullopt, std::string(reason::kNoCoverage)});
      continue;
    }
    out.series.push_back(detail::to_series(id, clipped));
  }
  return out;
}

/// All rows grouped into series without any cohort rule.
inline CohortResult group_series(const std::vector<SeasonRecord>& records) {
  CohortResult out;
  for (const auto& [id, rows] : detail::group_by_player(records, out.exclusions)) {
    for (const auto& r : rows) ++out.age_counts[detail::whole_age(r.age)];
    out.series.push_back(detail::to_series(id, rows));
  }
  return out;
}

/// Mean of slg - avg over each player's seasons at whole ages 24 and 25.
inline std::map<std::string, double> early_iso_by_player(const std::vector<SeasonRecord>& records,
                                                         const CsvSchema& schema = {}, int age_lo = 24,
                                                         int age_hi = 25) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : records) {
    const int a = detail::whole_age(r.age);
    if (a < age_lo || a > age_hi) continue;
    const auto slg = r.number(schema.slg), avg = r.number(schema.avg);
    if (!slg || !avg) continue;
    auto& [sum, n] = acc[r.player_id];
    sum += *slg - *avg;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [id, sn] : acc) out[id] = sn.first / sn.second;
  return out;
}

struct PowerSplit {
  std::vector<PlayerSeries> power, non_power;
  std::vector<Exclusion> exclusions;
};

/// ISO strictly above the threshold is power. The comparison allows 1e-12
/// so that decimal inputs landing exactly on the threshold stay non-power.
inline PowerSplit split_power_groups(const std::vector<PlayerSeries>& series, const std::map<std::string, double>& iso,
                                     double threshold = 0.150) {
  PowerSplit out;
  for (const auto& s : series) {
    const auto it = iso.find(s.id);
    if (it == iso.end()) {
      out.exclusions.push_back({s.id, std::nullopt, std::string(reason::kNoIsoData)});
      continue;
    }
    auto copy = s;
    const bool power = it->second > threshold + 1e-12;
    copy.meta["group"] = power ? "power" : "non_power";
    (power ? out.power : out.non_power).push_back(std::move(copy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dates

struct Date {
  int year = 0;
  unsigned month = 0;
  unsigned day = 0;

  auto operator<=>(const Date&) const = default;
};

inline Date make_date(int y, unsigned m, unsigned d) {
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  require(ymd.ok(), ErrorCode::InvalidDate,
          "invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" + std::to_string(d));
  return {y, m, d};
}

/// YYYY-MM-DD.
inline Date parse_date(std::string_view s) {
  require(s.size() == 10 && s[4] == '-' && s[7] == '-', ErrorCode::InvalidDate,
          "expected YYYY-MM-DD, got '" + std::string(s) + "'");
  const auto y = detail::parse_int(s.substr(0, 4)), m = detail::parse_int(s.substr(5, 2)), d = detail::parse_int(s.substr(8, 2));
  require(y && m && d && *m > 0 && *d > 0, ErrorCode::InvalidDate, "expected YYYY-MM-DD, got '" + std::string(s) + "'");
  return make_date(*y, static_cast<unsigned>(*m), static_cast<unsigned>(*d));
}

/// Age in completed years on the reference date.
inline int age_at_reference(const Date& birth, const Date& reference) {
  make_date(birth.year, birth.month, birth.day);
  make_date(reference.year, reference.month, reference.day);
  require(!(reference < birth), ErrorCode::InvalidDate, "reference date precedes birth date");
  int age = reference.year - birth.year;
  if (std::pair(reference.month, reference.day) < std::pair(birth.month, birth.day)) --age;
  return age;
}

/// Reference date of a season: month/day in the season's start year plus an offset
/// (a season starting in autumn uses offset 1 for a February reference).
inline Date season_reference_date(int season_year, unsigned month = 2, unsigned day = 1, int year_offset = 0) {
  return make_date(season_year + year_offset, month, day);
}

}  // namespace agecurve

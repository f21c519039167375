#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "agecurve/ingest.hpp"

using namespace agecurve;

namespace {

SeasonRecord rec(const std::string& id, int year, double age, double value, std::optional<double> pa = 500.0) {
  SeasonRecord r;
  r.player_id = id;
  r.season_year = year;
  r.age = age;
  r.value = value;
  r.exposure = pa;
  return r;
}

void add_career(std::vector<SeasonRecord>& out, const std::string& id, const std::vector<int>& ages, int birth_year = 1970,
                const std::set<int>& low_pa_ages = {}) {
  for (int a : ages) out.push_back(rec(id, birth_year + a, a, 0.3 + 0.001 * a, low_pa_ages.count(a) ? 150.0 : 520.0));
}

std::vector<int> range(int lo, int hi, std::set<int> skip = {}) {
  std::vector<int> v;
  for (int a = lo; a <= hi; ++a)
    if (!skip.count(a)) v.push_back(a);
  return v;
}

// ten players with hand-chosen coverage problems
std::vector<SeasonRecord> mlb_fixture() {
  std::vector<SeasonRecord> r;
  add_career(r, "p01", range(24, 36));
  add_career(r, "p02", range(24, 36, {29, 30}));
  add_career(r, "p03", range(24, 36, {29}));
  add_career(r, "p04", range(24, 36), 1970, {29, 30});
  add_career(r, "p05", range(24, 36), 1970, {29});
  add_career(r, "p06", range(24, 36), 1880);
  add_career(r, "p07", range(27, 33));
  add_career(r, "p08", range(22, 38));
  add_career(r, "p09", {24, 26, 28, 30, 32, 34, 36});
  add_career(r, "p10", range(24, 36, {31, 32}));
  return r;
}

std::vector<std::string> ids(const std::vector<PlayerSeries>& s) {
  std::vector<std::string> out;
  for (const auto& p : s) out.push_back(p.id);
  return out;
}

}  // namespace

TEST(LoadCsv, HeaderOnly) {
  std::istringstream in("player_id,season_year,age,value,pa\n");
  const auto r = parse_csv(in);
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.rejects.empty());
}

TEST(LoadCsv, NonNumericAgeIsRejected) {
  std::istringstream in("player_id,season_year,age,value,pa\nx1,2001,twenty,0.3,400\n");
  const auto r = parse_csv(in);
  EXPECT_TRUE(r.records.empty());
  ASSERT_EQ(r.rejects.size(), 1u);
  EXPECT_EQ(r.rejects[0].row, 2u);
  EXPECT_NE(r.rejects[0].reason.find("age"), std::string::npos);
}

TEST(LoadCsv, RejectReasons) {
  std::istringstream in(
      "player_id,season_year,age,value,pa\n"
      "a,1850,20,1,1\n"
      "a,2000,-3,1,1\n"
      "a,2000,20,,1\n"
      "a,2000,20,1,lots\n"
      "a,2000,20\n"
      ",2000,20,1,1\n"
      "a,2000,20,1,\n");
  const auto r = parse_csv(in);
  ASSERT_EQ(r.rejects.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.rejects[i].row, i + 2);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_FALSE(r.records[0].exposure.has_value());
}

TEST(LoadCsv, RoundTripThroughWriter) {
  std::vector<SeasonRecord> rs{rec("alpha", 1999, 27.5, 0.3331, 612), rec("b,\"q\"", 2004, 31, -0.1, std::nullopt),
                               rec("c", 1921, 19.25, 1e-7, 200)};
  rs[0].extra = {{"position", "SS"}, {"slg", "0.512"}};
  rs[2].extra = {{"position", "1B"}};
  std::stringstream buf;
  write_csv(buf, rs);
  const auto back = parse_csv(buf);
  ASSERT_TRUE(back.rejects.empty());
  ASSERT_EQ(back.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.records[i].player_id, rs[i].player_id);
    EXPECT_EQ(back.records[i].season_year, rs[i].season_year);
    EXPECT_EQ(back.records[i].age, rs[i].age);
    EXPECT_EQ(back.records[i].value, rs[i].value);
    EXPECT_EQ(back.records[i].exposure, rs[i].exposure);
  }
  EXPECT_EQ(back.records[0].extra.at("slg"), "0.512");
  EXPECT_EQ(back.records[2].extra.at("slg"), "");
  EXPECT_EQ(*back.records[0].number("slg"), 0.512);
}

TEST(LoadCsv, ConfiguredColumnsAndErrors) {
  std::istringstream in("id,yr,a,woba\nz,2010,25,0.35\n");
  CsvSchema schema;
  schema.player_id = "id";
  schema.season_year = "yr";
  schema.age = "a";
  schema.value = "woba";
  const auto r = parse_csv(in, schema);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].value, 0.35);

  std::istringstream bad("player_id,season_year,value\n");
  try {
    (void)parse_csv(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaError);
  }
  try {
    (void)load_csv("/nonexistent/agecurve/input.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(LoadCsv, ReadsFromDisk) {
  const auto path = std::filesystem::temp_directory_path() / "agecurve_ingest_test.csv";
  {
    std::ofstream out(path);
    out << "player_id,season_year,age,value,pa\r\nq,2000,30,1.5,300\r\n";
  }
  const auto r = load_csv(path);
  std::filesystem::remove(path);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].exposure, 300.0);
}

TEST(GapRule, Boundaries) {
  EXPECT_TRUE(passes_gap_rule({24, 25, 26, 27, 28, 30, 31, 32, 33, 34, 35, 36}, 24, 36, false));
  EXPECT_FALSE(passes_gap_rule({24, 25, 26, 27, 28, 31, 32, 33, 34, 35, 36}, 24, 36, false));
  EXPECT_TRUE(passes_gap_rule({28, 29, 30}, 24, 36, false));
  EXPECT_FALSE(passes_gap_rule({28, 29, 30}, 24, 36, true));
  EXPECT_TRUE(passes_gap_rule({25, 27, 29, 31, 33, 35}, 24, 36, true));
  EXPECT_FALSE(passes_gap_rule({}, 24, 36, false));
}

TEST(MlbCohort, HandEnumeratedFixture) {
  const auto records = mlb_fixture();
  const auto copy = records;
  const auto res = filter_mlb_cohort(records);
  EXPECT_EQ(ids(res.series), (std::vector<std::string>{"p01", "p03", "p05", "p07", "p08", "p09"}));
  MlbCohortOptions strict;
  strict.strict_window = true;
  EXPECT_EQ(ids(filter_mlb_cohort(records, strict).series), (std::vector<std::string>{"p01", "p03", "p05", "p08", "p09"}));

  // inputs untouched
  ASSERT_EQ(records.size(), copy.size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].age, copy[i].age);

  const auto& p08 = res.series[4];
  EXPECT_EQ(p08.times.front(), 24.0);
  EXPECT_EQ(p08.times.back(), 36.0);
  EXPECT_EQ(res.age_counts.at(24), 5u);

  std::set<std::string> gap_players;
  for (const auto& e : res.exclusions)
    if (e.reason_code == "AGE_GAP") gap_players.insert(e.player_id);
  EXPECT_EQ(gap_players, (std::set<std::string>{"p02", "p04", "p10"}));
}

TEST(MlbCohort, EveryRowAccountedForOnce) {
  const auto records = mlb_fixture();
  const auto res = filter_mlb_cohort(records);
  std::set<std::pair<std::string, int>> row_excl;
  std::set<std::string> player_excl;
  for (const auto& e : res.exclusions) {
    if (e.season_year) {
      EXPECT_TRUE(row_excl.emplace(e.player_id, *e.season_year).second) << "duplicate " << e.player_id;
    } else {
      EXPECT_TRUE(player_excl.insert(e.player_id).second);
    }
  }
  std::size_t in_series = 0;
  for (const auto& s : res.series) in_series += s.size();
  std::size_t in_excluded_players = 0;
  for (const auto& r : records) {
    if (player_excl.count(r.player_id) && !row_excl.count({r.player_id, r.season_year})) ++in_excluded_players;
  }
  EXPECT_EQ(in_series + row_excl.size() + in_excluded_players, records.size());
  const auto p06 = std::count_if(res.exclusions.begin(), res.exclusions.end(),
                                 [](const Exclusion& e) { return e.player_id == "p06" && e.reason_code == "BEFORE_MIN_YEAR"; });
  EXPECT_EQ(p06, 13);
}

TEST(MlbCohort, SeasonFiltersCommute) {
  auto records = mlb_fixture();
  records.push_back(rec("p11", 1915, 25, 0.3, 100.0));
  std::vector<Exclusion> ex1, ex2;
  const auto a = filter_min_exposure(filter_min_year(records, 1920, ex1), 200.0, ex1);
  const auto b = filter_min_year(filter_min_exposure(records, 200.0, ex2), 1920, ex2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].player_id, b[i].player_id);
    EXPECT_EQ(a[i].season_year, b[i].season_year);
  }
  EXPECT_EQ(ex1.size(), ex2.size());
}

TEST(PowerSplit, IsoThreshold) {
  std::vector<SeasonRecord> r;
  auto season = [&](const std::string& id, int age, const char* slg, const char* avg) {
    auto s = rec(id, 1990 + age, age, 0.3);
    s.extra = {{"slg", slg}, {"avg", avg}};
    r.push_back(s);
  };
  season("a", 24, "0.450", "0.280");
  season("a", 25, "0.450", "0.280");
  season("b", 24, "0.450", "0.300");
  season("b", 25, "0.450", "0.300");
  season("c", 24, "0.500", "0.250");
  season("c", 25, "0.300", "0.280");
  season("d", 25, "0.480", "0.300");
  season("d", 26, "0.100", "0.300");
  season("e", 24, "0.400", "0.249");
  season("e", 25, "0.400", "0.249");
  season("f", 27, "0.600", "0.200");

  const auto iso = early_iso_by_player(r);
  EXPECT_NEAR(iso.at("a"), 0.170, 1e-12);
  EXPECT_NEAR(iso.at("b"), 0.150, 1e-12);
  EXPECT_NEAR(iso.at("c"), 0.135, 1e-12);
  EXPECT_NEAR(iso.at("d"), 0.180, 1e-12);
  EXPECT_FALSE(iso.count("f"));

  std::vector<PlayerSeries> series;
  for (const char* id : {"a", "b", "c", "d", "e", "f"}) series.push_back({id, {25.0}, {0.3}, {}});
  const auto split = split_power_groups(series, iso);
  EXPECT_EQ(ids(split.power), (std::vector<std::string>{"a", "d", "e"}));
  EXPECT_EQ(ids(split.non_power), (std::vector<std::string>{"b", "c"}));
  ASSERT_EQ(split.exclusions.size(), 1u);
  EXPECT_EQ(split.exclusions[0].player_id, "f");
  EXPECT_EQ(split.exclusions[0].reason_code, "NO_ISO_DATA");
  EXPECT_EQ(split.power[0].meta.at("group"), "power");
}

TEST(NbaCohort, SeasonCountAndClipping) {
  std::vector<SeasonRecord> r;
  add_career(r, "seven", range(22, 28));
  add_career(r, "eight", range(22, 29));
  add_career(r, "old", range(34, 41));
  add_career(r, "young", {18, 19, 20, 21, 22, 23, 24, 25, 26});
  const auto res = filter_nba_cohort(r);
  EXPECT_EQ(ids(res.series), (std::vector<std::string>{"eight", "old", "young"}));
  EXPECT_EQ(res.series[1].times.back(), 39.0);
  EXPECT_EQ(res.series[1].size(), 6u);
  EXPECT_EQ(res.series[2].times.front(), 19.0);

  std::multiset<std::string> reasons;
  for (const auto& e : res.exclusions) reasons.insert(e.player_id + ":" + e.reason_code);
  EXPECT_EQ(reasons, (std::multiset<std::string>{"seven:FEW_SEASONS", "old:AGE_OUT_OF_RANGE", "old:AGE_OUT_OF_RANGE",
                                                 "young:AGE_OUT_OF_RANGE"}));
  EXPECT_EQ(res.age_counts.at(22), 2u);
  EXPECT_EQ(res.age_counts.at(39), 1u);
  EXPECT_FALSE(res.age_counts.count(41));
}

TEST(NbaCohort, DuplicateAgesReported) {
  std::vector<SeasonRecord> r;
  add_career(r, "dup", range(20, 28));
  r.push_back(rec("dup", 2001, 24, 9.9));
  const auto res = filter_nba_cohort(r);
  ASSERT_EQ(res.series.size(), 1u);
  EXPECT_EQ(res.series[0].size(), 9u);
  ASSERT_EQ(res.exclusions.size(), 1u);
  EXPECT_EQ(res.exclusions[0].reason_code, "DUPLICATE_AGE");
}

TEST(Dates, AgeAtReference) {
  const auto ref = parse_date("2010-02-01");
  EXPECT_EQ(age_at_reference(parse_date("1988-02-02"), ref), 21);
  EXPECT_EQ(age_at_reference(parse_date("1988-02-01"), ref), 22);
  struct Case {
    const char* birth;
    int season;
    int age;
  };
  for (const auto& c : {Case{"1990-12-31", 2011, 20}, Case{"1992-02-29", 2013, 20}, Case{"1992-02-29", 2012, 19},
                        Case{"1985-01-15", 2000, 15}, Case{"1979-07-04", 2015, 35}}) {
    EXPECT_EQ(age_at_reference(parse_date(c.birth), season_reference_date(c.season)), c.age) << c.birth;
  }
  EXPECT_EQ(season_reference_date(2009, 2, 1, 1), parse_date("2010-02-01"));
}

TEST(Dates, Errors) {
  try {
    (void)age_at_reference(parse_date("2011-01-01"), parse_date("2010-02-01"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidDate);
  }
  EXPECT_THROW((void)parse_date("2010-02-30"), Error);
  EXPECT_THROW((void)parse_date("2011-02-29"), Error);
  EXPECT_THROW((void)parse_date("2010/02/01"), Error);
  EXPECT_NO_THROW((void)parse_date("2012-02-29"));
}

TEST(Exclusions, CsvReport) {
  std::ostringstream out;
  write_exclusions(out, {{"a", 2001, "LOW_EXPOSURE"}, {"b,c", std::nullopt, "AGE_GAP"}});
  EXPECT_EQ(out.str(), "player_id,season_year,reason_code\na,2001,LOW_EXPOSURE\n\"b,c\",,AGE_GAP\n");
}

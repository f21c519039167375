#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "json.hpp"

#include "agecurve/error.hpp"
#include "agecurve/ingest.hpp"

#ifndef AGECURVE_VERSION
#define AGECURVE_VERSION "0.0.0"
#endif

namespace agecurve::app {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = AGECURVE_VERSION;

/// Shortest round-trip text for finite values, NA otherwise.
inline std::string num(double v) { return std::isfinite(v) ? agecurve::detail::format_double(v) : "NA"; }

/// Non-finite doubles become null in JSON output.
inline nlohmann::ordered_json jnum(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json jnums(const std::vector<double>& v) {
  auto out = nlohmann::ordered_json::array();
  for (double x : v) out.push_back(jnum(x));
  return out;
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  explicit Table(std::vector<std::string> cols) : columns(std::move(cols)) {}

  void add(std::vector<std::string> row) {
    require(row.size() == columns.size(), ErrorCode::InvalidArgument, "row width does not match table header");
    rows.push_back(std::move(row));
  }

  void write(std::ostream& out) const {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << agecurve::detail::csv_escape(cells[i]);
      out << '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
  }
};

/// Collects files in a sibling staging directory and moves it into place
/// only when commit() is called. An abandoned stage is removed.
class StagedOutput {
 public:
  explicit StagedOutput(std::filesystem::path target) : target_(std::filesystem::absolute(std::move(target))) {
    namespace fs = std::filesystem;
    target_ = target_.lexically_normal();
    if (target_.filename().empty()) target_ = target_.parent_path();
    if (fs::exists(target_)) {
      require(fs::is_directory(target_), ErrorCode::IoError, "'" + target_.string() + "' exists and is not a directory");
      const bool empty = fs::is_empty(target_);
      require(empty || fs::exists(target_ / "manifest.json"), ErrorCode::IoError,
              "refusing to replace '" + target_.string() + "': it is not empty and has no manifest.json");
    }
    std::error_code ec;
    fs::create_directories(target_.parent_path(), ec);
    stage_ = target_.parent_path() / ("." + target_.filename().string() + ".staging");
    fs::remove_all(stage_, ec);
    require(fs::create_directory(stage_, ec) && !ec, ErrorCode::IoError, "cannot create '" + stage_.string() + "'");
  }

  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      std::filesystem::remove_all(stage_, ec);
    }
  }

  [[nodiscard]] const std::filesystem::path& target() const noexcept { return target_; }

  std::ofstream open(const std::string& name) {
    require(name != "manifest.json" && names_.insert(name).second, ErrorCode::InvalidArgument,
            "output '" + name + "' written twice");
    std::ofstream out(stage_ / name, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write '" + (stage_ / name).string() + "'");
    return out;
  }

  void write(const std::string& name, const Table& t) {
    auto out = open(name);
    t.write(out);
    finish(out, name);
  }

  void write(const std::string& name, const nlohmann::ordered_json& j) {
    auto out = open(name);
    out << j.dump(2) << '\n';
    finish(out, name);
  }

  void write_text(const std::string& name, const std::string& text) {
    auto out = open(name);
    out << text;
    finish(out, name);
  }

  [[nodiscard]] std::vector<std::string> files() const { return {names_.begin(), names_.end()}; }

  /// Writes manifest.json and swaps the stage into the target location.
  void commit(nlohmann::ordered_json manifest) {
    namespace fs = std::filesystem;
    auto list = nlohmann::ordered_json::array();
    for (const auto& n : names_) list.push_back(n);
    manifest["outputs"] = list;
    {
      std::ofstream out(stage_ / "manifest.json", std::ios::binary);
      out << manifest.dump(2) << '\n';
      finish(out, "manifest.json");
    }
    std::error_code ec;
    if (fs::exists(target_)) {
      const fs::path old = target_.parent_path() / ("." + target_.filename().string() + ".previous");
      fs::remove_all(old, ec);
      fs::rename(target_, old, ec);
      require(!ec, ErrorCode::IoError, "cannot move aside '" + target_.string() + "': " + ec.message());
      fs::rename(stage_, target_, ec);
      if (ec) {
        std::error_code ignore;
        fs::rename(old, target_, ignore);
        throw Error(ErrorCode::IoError, "cannot promote output to '" + target_.string() + "': " + ec.message());
      }
      fs::remove_all(old, ec);
    } else {
      fs::rename(stage_, target_, ec);
      require(!ec, ErrorCode::IoError, "cannot promote output to '" + target_.string() + "': " + ec.message());
    }
    committed_ = true;
  }

 private:
  static void finish(std::ofstream& out, const std::string& name) {
    out.flush();
    require(out.good(), ErrorCode::IoError, "failed writing '" + name + "'");
  }

  std::filesystem::path target_, stage_;
  std::set<std::string> names_;
  bool committed_ = false;
};

inline nlohmann::ordered_json make_manifest(const std::string& subcommand, std::uint64_t seed,
                                            const nlohmann::ordered_json& resolved) {
  return nlohmann::ordered_json{{"schema_version", kSchemaVersion},
                                {"tool", "agecurve"},
                                {"version", kVersion},
                                {"subcommand", subcommand},
                                {"seed", seed},
                                {"config", resolved}};
}

}  // namespace agecurve::app

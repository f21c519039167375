#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "agecurve/app/config.hpp"
#include "agecurve/app/pipeline.hpp"

namespace {

using agecurve::app::json;

int report(int code, const std::string& kind, const std::vector<agecurve::app::ConfigIssue>& issues) {
  auto list = json::array();
  for (const auto& i : issues) list.push_back({{"path", i.path}, {"message", i.message}});
  std::cerr << json{{"error", {{"exit_code", code}, {"kind", kind}, {"issues", list}}}}.dump() << '\n';
  return code;
}

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out, input;
  long long seed = -1;
  bool print_config = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional aging-curve toolkit: smoothing, fPCA, PACE, permutation tests and clustering"};
  app.set_version_flag("--version", std::string(agecurve::app::kVersion));
  app.require_subcommand(1);
  Options opt;
  for (const auto& name : agecurve::app::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config,-c", opt.config, "JSON configuration file");
    sub->add_option("--seed", opt.seed, "random seed (overrides config 'seed')")->check(CLI::NonNegativeNumber);
    sub->add_option("--out,-o", opt.out, "output directory (overrides config 'output')");
    sub->add_option("--input,-i", opt.input, "input CSV (overrides config 'input.path')");
    sub->add_option("--set", opt.overrides, "override a config field, key.path=value (repeatable)");
    sub->add_flag("--print-config", opt.print_config, "print the resolved config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(2, "usage", {{"", e.what()}});
  }
  const std::string subcommand = app.get_subcommands().front()->get_name();

  try {
    json user = opt.config.empty() ? json::object() : agecurve::app::read_config_file(opt.config);
    std::vector<std::string> overrides = opt.overrides;
    if (opt.seed >= 0) overrides.push_back("seed=" + std::to_string(opt.seed));
    if (!opt.out.empty()) overrides.push_back("output=" + json(opt.out).dump());
    if (!opt.input.empty()) overrides.push_back("input.path=" + json(opt.input).dump());
    const json resolved = agecurve::app::resolve_config(user, overrides);
    if (opt.print_config) {
      (void)agecurve::app::parse_run_config(resolved);
      std::cout << resolved.dump(2) << '\n';
      return 0;
    }
    const auto dir = agecurve::app::run(subcommand, resolved);
    std::cout << dir.string() << '\n';
    return 0;
  } catch (const agecurve::app::ConfigError& e) {
    return report(2, "config", e.issues());
  } catch (const agecurve::Error& e) {
    const int code = agecurve::app::exit_code(e.code());
    return report(code, std::string(agecurve::to_string(e.code())), {{"", e.what()}});
  } catch (const std::filesystem::filesystem_error& e) {
    return report(3, "IoError", {{"", e.what()}});
  } catch (const std::exception& e) {
    return report(4, "internal", {{"", e.what()}});
  }
}

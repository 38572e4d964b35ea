#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tiltlab/core.hpp"
#include "tiltlab/fitting.hpp"
#include "tiltlab/mirror.hpp"

// Scenario configuration, seeded experiment orchestration, and report
// persistence: the user surface behind the command-line tool.
namespace tiltlab::harness {

using nlohmann::json;

struct Scenario {
  std::string name;
  core::PromptSet prompts;
  double beta = 1.0;
  std::size_t rollouts = 8;  // N per prompt
  fitting::FitConfig fit;
  std::optional<mirror::RefreshPlan> refresh;
  std::vector<std::string> checks;
};

// Throws std::runtime_error with the offending key or line on malformed input.
Scenario scenario_from_json(const json& doc);
json scenario_to_json(const Scenario& scenario);  // normalized form
Scenario load_scenario(const std::string& path);
void write_scenario(const Scenario& scenario, const std::string& path);

struct CheckResult {
  std::string name;
  double bound = 0.0;
  double measured = 0.0;
  bool pass = false;
};

struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;
  std::vector<std::string> files;
  double wall_ms = 0.0;  // reported on stderr, kept out of the diffable formats

  bool all_pass() const;
};

// Names of the property checks `verify` can run, in default-suite order.
std::vector<std::string> check_names();

// Built-in scenario used when no --config is given: the two-action prompt, a
// rare binary verifier, and a mild four-action prompt.
Scenario default_scenario();

// Runs one named check; throws std::invalid_argument on an unknown name.
CheckResult run_check(const std::string& name, const Scenario& scenario,
                      std::uint64_t seed, bool deep);

// Fixed 12-significant-digit scientific notation, the CSV number format.
std::string format_sci(double value);

void write_report_csv(const RunReport& report, std::ostream& out);
void write_report_records(const RunReport& report, std::ostream& out);

// Entry point behind main(): subcommands target, project, oneshot, iterate,
// bounds, verify, sweep. Exit 0 when every requested assertion passes, 1 on
// an assertion failure, 2 on configuration errors.
int run_cli(int argc, char** argv);

}  // namespace tiltlab::harness

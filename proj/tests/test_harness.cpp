#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tiltlab/bounds.hpp"
#include "tiltlab/harness.hpp"

using namespace tiltlab;
using harness::Scenario;
using harness::json;

namespace {

// Drives the real entry point with captured streams, exactly as a shell would.
int cli(std::vector<std::string> args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  args.insert(args.begin(), "tiltlab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());

  std::ostringstream captured_out, captured_err;
  auto* old_out = std::cout.rdbuf(captured_out.rdbuf());
  auto* old_err = std::cerr.rdbuf(captured_err.rdbuf());
  int code = harness::run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);

  if (out_text) *out_text = captured_out.str();
  if (err_text) *err_text = captured_err.str();
  return code;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("scientific formatting pins twelve significant digits") {
  CHECK(harness::format_sci(0.7310585786300049) == "7.31058578630e-01");
  CHECK(harness::format_sci(1.0) == "1.00000000000e+00");
  CHECK(harness::format_sci(0.0) == "0.00000000000e+00");
  CHECK(harness::format_sci(-0.25) == "-2.50000000000e-01");
  CHECK(harness::format_sci(1234.5) == "1.23450000000e+03");
  CHECK(harness::format_sci(3.0e-12) == "3.00000000000e-12");
}

TEST_CASE("default scenario holds the three worked prompts") {
  Scenario s = harness::default_scenario();
  CHECK(s.name == "default");
  REQUIRE(s.prompts.prompts.size() == 3);
  CHECK(s.prompts.prompts[0].id == "two-action");
  CHECK(s.prompts.prompts[1].id == "binary-0.1");
  CHECK(s.prompts.prompts[2].id == "quad");
  CHECK(s.beta == 1.0);
  CHECK(s.rollouts == 8);
  CHECK(!s.refresh.has_value());
  CHECK(s.checks.empty());
  CHECK(s.prompts.prompts[1].reference[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("minimal config fills every default") {
  json doc = {{"prompts",
               {{"kind", "explicit"},
                {"items", json::array({{{"id", "only"},
                                        {"reward", {1.0, 0.0}},
                                        {"reference", {0.5, 0.5}}}})}}}};
  Scenario s = harness::scenario_from_json(doc);
  CHECK(s.name == "unnamed");
  CHECK(s.beta == 1.0);
  CHECK(s.rollouts == 8);
  CHECK(s.fit.step_size == 0.5);
  CHECK(s.fit.steps == 4000);
  CHECK(s.fit.kind == fitting::OptimizerKind::FullGradient);
  CHECK(!s.refresh.has_value());
  REQUIRE(s.prompts.prompts.size() == 1);
  // completions synthesized when omitted
  CHECK(s.prompts.prompts[0].completions[0] == "y0");
  CHECK(s.prompts.prompt_weights[0] == 1.0);
}

TEST_CASE("binary family expands to explicit prompts") {
  json doc = {{"scenario", "fam"},
              {"prompts", {{"kind", "binary"}, {"p", {0.05, 0.2}}}}};
  Scenario s = harness::scenario_from_json(doc);
  REQUIRE(s.prompts.prompts.size() == 2);
  CHECK(s.prompts.prompts[0].id == "binary-0");
  CHECK(s.prompts.prompts[1].id == "binary-1");
  CHECK(s.prompts.prompts[0].completions == std::vector<std::string>{"pass", "fail"});
  CHECK(s.prompts.prompts[0].reward[0] == 1.0);
  CHECK(s.prompts.prompts[0].reward[1] == 0.0);
  CHECK(s.prompts.prompts[1].reference[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(s.prompts.prompts[1].reference[1] == doctest::Approx(0.8).epsilon(1e-12));

  // normalized form is explicit: the family description does not survive
  json normalized = harness::scenario_to_json(s);
  CHECK(normalized["prompts"]["kind"] == "explicit");
  CHECK(normalized["prompts"]["items"].size() == 2);
}

TEST_CASE("random family is reproducible from its seed") {
  json doc = {{"prompts",
               {{"kind", "random"}, {"count", 4}, {"actions", 5}, {"seed", 11}}}};
  Scenario a = harness::scenario_from_json(doc);
  Scenario b = harness::scenario_from_json(doc);
  REQUIRE(a.prompts.prompts.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.prompts.prompts[i].reference == b.prompts.prompts[i].reference);
    CHECK(a.prompts.prompts[i].reward == b.prompts.prompts[i].reward);
    REQUIRE(a.prompts.prompts[i].reference.size() == 5);
    for (double v : a.prompts.prompts[i].reference) CHECK(v >= 0.019);
  }
  doc["prompts"]["seed"] = 12;
  Scenario c = harness::scenario_from_json(doc);
  CHECK(a.prompts.prompts[0].reference != c.prompts.prompts[0].reference);
}

TEST_CASE("config round trip is byte-idempotent") {
  std::vector<json> configs;
  configs.push_back(harness::scenario_to_json(harness::default_scenario()));
  configs.push_back({{"scenario", "fam"},
                     {"prompts", {{"kind", "binary"}, {"p", {0.05, 0.1, 0.2}}}},
                     {"beta", 2.0},
                     {"rollouts", 16},
                     {"refresh", {{"rounds", 3}, {"rollouts", 4}, {"useful", {0}}}},
                     {"checks", {"binary_c2", "coverage_miss"}}});
  configs.push_back({{"prompts",
                      {{"kind", "random"}, {"count", 3}, {"actions", 4}, {"seed", 5}}},
                     {"refresh", {{"rounds", 2}, {"rollouts", 2}, {"useful", 0.25}}},
                     {"fit", {{"steps", 100}, {"optimizer", "sgd"}}}});
  for (const json& doc : configs) {
    std::string first = harness::scenario_to_json(harness::scenario_from_json(doc)).dump();
    std::string second =
        harness::scenario_to_json(harness::scenario_from_json(json::parse(first))).dump();
    std::string third =
        harness::scenario_to_json(harness::scenario_from_json(json::parse(second))).dump();
    CHECK(first == second);
    CHECK(second == third);
  }
}

TEST_CASE("scenario files survive a disk round trip") {
  Scenario s = harness::default_scenario();
  s.checks = {"matching_law", "binary_c2"};
  auto path = temp_file("tiltlab-roundtrip.json");
  harness::write_scenario(s, path.string());
  Scenario loaded = harness::load_scenario(path.string());
  CHECK(harness::scenario_to_json(loaded).dump() == harness::scenario_to_json(s).dump());
  CHECK(loaded.checks == s.checks);
  std::filesystem::remove(path);
}

TEST_CASE("malformed configs are rejected with the offending key") {
  auto reject = [](const json& doc, const std::string& needle) {
    try {
      harness::scenario_from_json(doc);
      FAIL_CHECK("config accepted: ", doc.dump());
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  reject(json::object(), "prompts");
  reject({{"prompts", {{"kind", "martian"}}}}, "martian");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.0}}}}}, "between 0 and 1");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.1}}}}, {"beta", -1.0}}, "beta");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.1}}}}, {"rollouts", 2.5}},
         "nonnegative integer");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.1}}}},
          {"checks", {"no_such_check"}}},
         "\"no_such_check\"");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.1}}}},
          {"checks", {"binary_c2", "binary_c2"}}},
         "duplicate");
  reject({{"prompts", {{"kind", "binary"}, {"p", {0.1}}}},
          {"fit", {{"optimizer", "adam"}}}},
         "optimizer");
  reject({{"prompts",
           {{"kind", "explicit"},
            {"items", json::array({{{"id", "bad"},
                                    {"reward", {1.0}},
                                    {"reference", {0.7, 0.3}}}})}}}},
         "bad");
}

TEST_CASE("report writers agree on values and the csv oracle is exact") {
  harness::RunReport report;
  report.scenario = "oracle";
  report.seed = 9;
  report.checks.push_back({"alpha", 1e-10, 2.5e-13, true});
  report.checks.push_back({"beta", 3.0, 3.25, false});
  CHECK(!report.all_pass());

  std::ostringstream csv;
  harness::write_report_csv(report, csv);
  CHECK(csv.str() ==
        "check,bound,measured,pass\n"
        "alpha,1.00000000000e-10,2.50000000000e-13,1\n"
        "beta,3.00000000000e+00,3.25000000000e+00,0\n");

  std::ostringstream records;
  harness::write_report_records(report, records);
  auto lines = lines_of(records.str());
  REQUIRE(lines.size() == 3);
  json head = json::parse(lines[0]);
  CHECK(head["scenario"] == "oracle");
  CHECK(head["seed"] == 9);
  json second = json::parse(lines[2]);
  CHECK(second["check"] == "beta");
  CHECK(second["pass"] == false);
  CHECK(second["measured"].get<double>() == 3.25);
}

TEST_CASE("check catalog is fixed and closed") {
  auto names = harness::check_names();
  CHECK(names.size() == 17);
  CHECK(names.front() == "gibbs_optimality");
  CHECK(std::find(names.begin(), names.end(), "token_identity") != names.end());
  CHECK_THROWS_AS(
      harness::run_check("no_such_check", harness::default_scenario(), 0, false),
      std::invalid_argument);
}

TEST_CASE("single checks run standalone and pass on the default scenario") {
  Scenario s = harness::default_scenario();
  for (const std::string& name : {"matching_law", "weight_identity", "exact_path_target",
                                  "refresh_dominance", "lattice_price"}) {
    auto result = harness::run_check(name, s, 4, false);
    CHECK(result.name == name);
    CHECK(result.pass);
  }
}

TEST_CASE("cli prints the worked tilted target") {
  std::string out;
  CHECK(cli({"target"}, &out) == 0);
  CHECK(out.find("prompt,completion,reference,reward,target,weight") != std::string::npos);
  CHECK(out.find("7.31058578630e-01") != std::string::npos);
  CHECK(out.find("two-action") != std::string::npos);
}

TEST_CASE("cli project table shows the raw-reward shortfall") {
  std::string out;
  CHECK(cli({"project"}, &out) == 0);
  // exp-reward and canonical weighting both land on the target; raw reward
  // pays the two-action gap log((1+e)/e)
  CHECK(out.find("3.13261687518e-01") != std::string::npos);
  CHECK(out.find("canonical") != std::string::npos);
  for (const auto& line : lines_of(out)) {
    auto cells = split_csv_line(line);
    if (cells.size() == 4 && (cells[1] == "canonical" || cells[1] == "exp-reward"))
      CHECK(std::abs(std::stod(cells[3])) < 1e-10);
  }
}

TEST_CASE("cli sweep rows reproduce the registry row by row") {
  std::string out;
  CHECK(cli({"sweep"}, &out) == 0);
  auto lines = lines_of(out);
  REQUIRE(lines.size() == 19);
  CHECK(lines[0] == "p,beta,n,coverage_miss,binary_c2,binary_frontier");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split_csv_line(lines[i]);
    REQUIRE(cells.size() == 6);
    double p = std::stod(cells[0]);
    double beta = std::stod(cells[1]);
    double n = std::stod(cells[2]);
    double success = bounds::evaluate("binary_target_success", {{"p", p}, {"beta", beta}}).bound;
    CHECK(cells[3] ==
          harness::format_sci(bounds::evaluate("coverage_miss", {{"p", p}, {"n", n}}).bound));
    CHECK(cells[4] ==
          harness::format_sci(bounds::evaluate("binary_c2", {{"p", p}, {"beta", beta}}).bound));
    CHECK(cells[5] == harness::format_sci(bounds::evaluate(
                          "binary_frontier", {{"eta", 1.0 - success}, {"p", p}}).bound));
  }
}

TEST_CASE("cli bounds dump covers the catalog with quoted formulas") {
  std::string out;
  CHECK(cli({"bounds"}, &out) == 0);
  auto lines = lines_of(out);
  CHECK(lines.size() == bounds::catalog().size() + 1);
  CHECK(lines[0] == "name,anchor,formula,params");
  bool saw_quoted = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split_csv_line(lines[i]);
    REQUIRE(cells.size() == 4);
    CHECK(bounds::has_entry(cells[0]));
    if (lines[i].find('"') != std::string::npos) saw_quoted = true;
  }
  // at least one display formula contains a comma and must arrive quoted
  CHECK(saw_quoted);
}

TEST_CASE("cli verify is deterministic for a fixed seed") {
  Scenario s = harness::default_scenario();
  s.checks = {"matching_law", "binary_c2", "coverage_miss", "exact_path_target"};
  auto path = temp_file("tiltlab-verify.json");
  harness::write_scenario(s, path.string());

  std::string first, second;
  CHECK(cli({"verify", "--config", path.string(), "--seed", "7"}, &first) == 0);
  CHECK(cli({"verify", "--config", path.string(), "--seed", "7"}, &second) == 0);
  CHECK(first == second);
  CHECK(lines_of(first).size() == 5);
  CHECK(first.find("coverage_miss") != std::string::npos);

  std::string shifted;
  CHECK(cli({"verify", "--config", path.string(), "--seed", "8"}, &shifted) == 0);
  CHECK(shifted != first);  // the monte-carlo line moves with the seed
  std::filesystem::remove(path);
}

TEST_CASE("cli verify names the first failing check on stderr") {
  json doc = {{"scenario", "spiky"},
              {"prompts",
               {{"kind", "explicit"},
                {"items", json::array({{{"id", "spike"},
                                        {"reward", {8.0, 0.0}},
                                        {"reference", {0.5, 0.5}}}})}}},
              {"beta", 0.5},
              {"fit", {{"steps", 0}}},
              {"checks", {"e2e_certificate"}}};
  auto path = temp_file("tiltlab-failing.json");
  std::ofstream(path) << doc.dump();

  std::string out, err;
  CHECK(cli({"verify", "--config", path.string()}, &out, &err) == 1);
  CHECK(err.find("check failed: e2e_certificate") != std::string::npos);
  auto lines = lines_of(out);
  REQUIRE(lines.size() == 2);
  CHECK(lines[1].back() == '0');
  std::filesystem::remove(path);
}

TEST_CASE("cli error paths exit with code two") {
  std::string out, err;
  CHECK(cli({"frobnicate"}, &out, &err) == 2);
  CHECK(cli({}, &out, &err) == 2);
  CHECK(cli({"verify", "--config", "/nonexistent/nowhere.json"}, &out, &err) == 2);
  CHECK(err.find("nowhere.json") != std::string::npos);

  json doc = {{"prompts", {{"kind", "binary"}, {"p", {0.1}}}},
              {"checks", {"made_up_check"}}};
  auto path = temp_file("tiltlab-badcheck.json");
  std::ofstream(path) << doc.dump();
  CHECK(cli({"verify", "--config", path.string()}, &out, &err) == 2);
  CHECK(err.find("\"made_up_check\"") != std::string::npos);
  std::filesystem::remove(path);

  auto garbled = temp_file("tiltlab-garbled.json");
  std::ofstream(garbled) << "{ not json";
  CHECK(cli({"verify", "--config", garbled.string()}, &out, &err) == 2);
  std::filesystem::remove(garbled);

  CHECK(cli({"--help"}, &out, &err) == 0);
  CHECK(out.find("verify") != std::string::npos);
}

TEST_CASE("cli iterate reports rounds, coverage, and the budget comparison") {
  std::string out;
  CHECK(cli({"iterate", "--seed", "3"}, &out) == 0);
  CHECK(out.find("scope,metric,value") != std::string::npos);
  CHECK(out.find("p_refresh") != std::string::npos);
  CHECK(out.find("round-3") != std::string::npos);
  CHECK(out.find("refreshed_hit_draws") != std::string::npos);
  CHECK(out.find("oneshot_hit_draws") != std::string::npos);
}

TEST_CASE("cli oneshot emits the gap decomposition and dataset records") {
  std::string out;
  CHECK(cli({"oneshot", "--seed", "5"}, &out) == 0);
  CHECK(out.find("assembled") != std::string::npos);
  CHECK(out.find("actual") != std::string::npos);

  auto dir = temp_file("tiltlab-oneshot-out");
  std::filesystem::remove_all(dir);
  CHECK(cli({"oneshot", "--seed", "5", "--out", dir.string()}, &out) == 0);
  CHECK(std::filesystem::exists(dir / "default-oneshot.csv"));
  CHECK(std::filesystem::exists(dir / "default-oneshot.records"));
  auto dataset = dir / "default-dataset.records";
  REQUIRE(std::filesystem::exists(dataset));
  std::ifstream in(dataset);
  std::string line;
  REQUIRE(bool(std::getline(in, line)));
  CHECK_NOTHROW(json::parse(line));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli records format emits one json object per row") {
  std::string out;
  CHECK(cli({"target", "--format", "records"}, &out) == 0);
  auto lines = lines_of(out);
  REQUIRE(lines.size() == 8);  // three prompts, eight completions in total
  for (const auto& line : lines) {
    json row = json::parse(line);
    CHECK(row.contains("prompt"));
    CHECK(row.contains("target"));
  }
  CHECK(json::parse(lines[0])["target"].get<double>() ==
        doctest::Approx(0.7310585786300049).epsilon(1e-14));
}

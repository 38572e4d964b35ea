#include "tiltlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/bounds.hpp"
#include "tiltlab/estimator.hpp"
#include "tiltlab/projection.hpp"
#include "tiltlab/rng.hpp"

namespace tiltlab::harness {

namespace {

using core::PromptInstance;
using core::PromptSet;
using core::TabularPolicy;
using core::Temperature;
using core::Vec;

}  // namespace

std::string format_sci(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.11e", value);
  return buf;
}

namespace {

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_cell(const json& v) {
  if (v.is_string()) return csv_quote(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_float()) return format_sci(v.get<double>());
  return v.dump();
}

// Uniform row model behind every subcommand table: named columns for the CSV
// form, row objects for the record form.
struct Table {
  std::vector<std::string> columns;
  std::vector<json> rows;
};

void write_table_csv(const Table& table, std::ostream& out) {
  for (std::size_t i = 0; i < table.columns.size(); ++i)
    out << (i ? "," : "") << table.columns[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      out << (i ? "," : "");
      auto it = row.find(table.columns[i]);
      if (it != row.end()) out << csv_cell(*it);
    }
    out << '\n';
  }
}

void write_table_records(const Table& table, std::ostream& out) {
  for (const auto& row : table.rows) out << row.dump() << '\n';
}

// Nudges an already-normalized vector onto a floating-point fixed point: the
// left-to-right sum becomes exactly 1.0, so revalidating the written form
// cannot move any atom and round trips stay byte-identical.
Vec exact_simplex(Vec v) {
  for (int pass = 0; pass < 2; ++pass) {
    double sum = 0.0;
    for (double x : v) sum += x;
    if (sum == 1.0) return v;
    for (double& x : v) x /= sum;
  }
  double prefix = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) prefix += v[i];
  if (prefix > 0.0 && prefix < 1.0) v.back() = 1.0 - prefix;
  return v;
}

void snap_prompt_set(PromptSet& set) {
  for (auto& p : set.prompts) p.reference = exact_simplex(std::move(p.reference));
  set.prompt_weights = exact_simplex(std::move(set.prompt_weights));
}

PromptInstance random_prompt_instance(SplitRng& rng, std::size_t n, const std::string& id) {
  Vec reference = rng.simplex_point(n);
  double mass = 0.0;
  for (double& v : reference) {
    v = std::max(v, 0.02);
    mass += v;
  }
  for (double& v : reference) v /= mass;
  Vec reward(n);
  for (double& r : reward) r = rng.next_unit();
  std::vector<std::string> completions(n);
  for (std::size_t i = 0; i < n; ++i) completions[i] = "y" + std::to_string(i);
  return PromptInstance::make(id, std::move(completions), std::move(reward),
                              std::move(reference));
}

PromptInstance binary_instance(double p, const std::string& id) {
  return PromptInstance::make(id, {"pass", "fail"}, {1.0, 0.0}, {p, 1.0 - p});
}

[[noreturn]] void config_error(const std::string& message) {
  throw std::runtime_error("scenario config: " + message);
}

double require_number(const json& doc, const std::string& key, double fallback,
                      bool required = false) {
  if (!doc.contains(key)) {
    if (required) config_error("missing key '" + key + "'");
    return fallback;
  }
  if (!doc.at(key).is_number()) config_error("key '" + key + "' must be a number");
  return doc.at(key).get<double>();
}

std::size_t require_count(const json& doc, const std::string& key, std::size_t fallback,
                          bool required = false) {
  double v = require_number(doc, key, double(fallback), required);
  if (v < 0.0 || v != std::floor(v))
    config_error("key '" + key + "' must be a nonnegative integer");
  return std::size_t(v);
}

Vec number_array(const json& node, const std::string& key) {
  if (!node.is_array()) config_error("key '" + key + "' must be an array of numbers");
  Vec out;
  for (const auto& v : node) {
    if (!v.is_number()) config_error("key '" + key + "' must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

PromptSet prompts_from_json(const json& node) {
  if (!node.is_object() || !node.contains("kind"))
    config_error("'prompts' must be an object with a 'kind' key");
  std::string kind = node.at("kind").get<std::string>();

  std::vector<PromptInstance> prompts;
  Vec weights;
  if (kind == "explicit") {
    if (!node.contains("items") || !node.at("items").is_array())
      config_error("explicit prompts need an 'items' array");
    for (const auto& item : node.at("items")) {
      if (!item.contains("id")) config_error("prompt item missing 'id'");
      std::string id = item.at("id").get<std::string>();
      Vec reward = number_array(item.at("reward"), "reward");
      Vec reference = number_array(item.at("reference"), "reference");
      std::vector<std::string> completions;
      if (item.contains("completions"))
        for (const auto& c : item.at("completions")) completions.push_back(c.get<std::string>());
      else
        for (std::size_t i = 0; i < reward.size(); ++i)
          completions.push_back("y" + std::to_string(i));
      try {
        prompts.push_back(PromptInstance::make(id, std::move(completions), std::move(reward),
                                               std::move(reference)));
      } catch (const std::exception& e) {
        config_error("prompt '" + id + "': " + e.what());
      }
    }
    if (node.contains("weights")) weights = number_array(node.at("weights"), "weights");
  } else if (kind == "binary") {
    Vec grid = number_array(node.at("p"), "p");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] <= 0.0 || grid[i] >= 1.0)
        config_error("binary family needs p strictly between 0 and 1");
      prompts.push_back(binary_instance(grid[i], "binary-" + std::to_string(i)));
    }
  } else if (kind == "random") {
    std::size_t count = require_count(node, "count", 0, true);
    std::size_t actions = require_count(node, "actions", 0, true);
    auto seed = std::uint64_t(require_count(node, "seed", 0));
    if (count == 0 || actions < 2) config_error("random family needs count >= 1, actions >= 2");
    SplitRng rng = SplitRng(seed).derive("scenario-prompts");
    for (std::size_t i = 0; i < count; ++i) {
      SplitRng sub = rng.derive(i);
      prompts.push_back(random_prompt_instance(sub, actions, "random-" + std::to_string(i)));
    }
  } else {
    config_error("unknown prompt kind '" + kind + "'");
  }
  if (prompts.empty()) config_error("prompt source resolved to no prompts");
  try {
    PromptSet set = PromptSet::make(std::move(prompts), std::move(weights));
    snap_prompt_set(set);
    return set;
  } catch (const std::exception& e) {
    config_error(e.what());
  }
}

fitting::FitConfig fit_from_json(const json& node) {
  fitting::FitConfig config;
  if (node.is_null()) return config;
  if (!node.is_object()) config_error("'fit' must be an object");
  config.step_size = require_number(node, "step_size", config.step_size);
  config.steps = require_count(node, "steps", config.steps);
  config.minibatch = require_count(node, "minibatch", config.minibatch);
  config.seed = require_count(node, "seed", std::size_t(config.seed));
  if (config.step_size <= 0.0) config_error("'step_size' must be positive");
  if (config.minibatch == 0) config_error("'minibatch' must be at least 1");
  std::string kind = node.value("optimizer", "full");
  if (kind == "full")
    config.kind = fitting::OptimizerKind::FullGradient;
  else if (kind == "sgd")
    config.kind = fitting::OptimizerKind::Stochastic;
  else
    config_error("'optimizer' must be \"full\" or \"sgd\"");
  return config;
}

mirror::RefreshPlan refresh_from_json(const json& node) {
  if (!node.is_object()) config_error("'refresh' must be an object");
  mirror::RefreshPlan plan;
  plan.rounds = require_count(node, "rounds", plan.rounds);
  plan.rollouts = require_count(node, "rollouts", plan.rollouts);
  plan.beta = require_number(node, "beta", plan.beta);
  if (plan.rounds == 0 || plan.rollouts == 0)
    config_error("'refresh' needs rounds >= 1 and rollouts >= 1");
  if (plan.beta <= 0.0) config_error("'refresh' beta must be positive");
  if (node.contains("beta_per_round")) {
    plan.beta_per_round = number_array(node.at("beta_per_round"), "beta_per_round");
    for (double b : plan.beta_per_round)
      if (b <= 0.0) config_error("'beta_per_round' entries must be positive");
  }
  if (node.contains("useful")) {
    const json& u = node.at("useful");
    if (u.is_number()) {
      plan.useful_set = u.get<double>();
    } else if (u.is_array()) {
      std::vector<std::size_t> indices;
      for (const auto& v : u) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
          config_error("'useful' indices must be nonnegative integers");
        indices.push_back(v.get<std::size_t>());
      }
      plan.useful_set = std::move(indices);
    } else {
      config_error("'useful' must be an index array or a reward threshold");
    }
  }
  return plan;
}

}  // namespace

Scenario scenario_from_json(const json& doc) {
  if (!doc.is_object()) config_error("top level must be an object");
  Scenario scenario;
  scenario.name = doc.value("scenario", "unnamed");
  if (!doc.contains("prompts")) config_error("missing key 'prompts'");
  scenario.prompts = prompts_from_json(doc.at("prompts"));
  scenario.beta = require_number(doc, "beta", 1.0);
  if (scenario.beta <= 0.0) config_error("'beta' must be positive");
  scenario.rollouts = require_count(doc, "rollouts", 8);
  if (scenario.rollouts == 0) config_error("'rollouts' must be at least 1");
  scenario.fit = fit_from_json(doc.contains("fit") ? doc.at("fit") : json());
  if (doc.contains("refresh") && !doc.at("refresh").is_null())
    scenario.refresh = refresh_from_json(doc.at("refresh"));
  if (doc.contains("checks")) {
    if (!doc.at("checks").is_array()) config_error("'checks' must be an array of names");
    auto known = check_names();
    for (const auto& c : doc.at("checks")) {
      std::string name = c.get<std::string>();
      if (std::find(known.begin(), known.end(), name) == known.end())
        config_error("unknown check \"" + name + "\"");
      if (std::find(scenario.checks.begin(), scenario.checks.end(), name) !=
          scenario.checks.end())
        config_error("duplicate check \"" + name + "\"");
      scenario.checks.push_back(name);
    }
  }
  return scenario;
}

json scenario_to_json(const Scenario& scenario) {
  json doc;
  doc["scenario"] = scenario.name;
  json items = json::array();
  for (const auto& p : scenario.prompts.prompts) {
    json item;
    item["id"] = p.id;
    item["completions"] = p.completions;
    item["reward"] = p.reward;
    item["reference"] = p.reference;
    items.push_back(std::move(item));
  }
  doc["prompts"] = {{"kind", "explicit"},
                    {"items", std::move(items)},
                    {"weights", scenario.prompts.prompt_weights}};
  doc["beta"] = scenario.beta;
  doc["rollouts"] = scenario.rollouts;
  json fit;
  fit["step_size"] = scenario.fit.step_size;
  fit["steps"] = scenario.fit.steps;
  fit["minibatch"] = scenario.fit.minibatch;
  fit["seed"] = scenario.fit.seed;
  fit["optimizer"] =
      scenario.fit.kind == fitting::OptimizerKind::FullGradient ? "full" : "sgd";
  doc["fit"] = std::move(fit);
  if (scenario.refresh) {
    json refresh;
    refresh["rounds"] = scenario.refresh->rounds;
    refresh["rollouts"] = scenario.refresh->rollouts;
    refresh["beta"] = scenario.refresh->beta;
    if (!scenario.refresh->beta_per_round.empty())
      refresh["beta_per_round"] = scenario.refresh->beta_per_round;
    if (const auto* indices =
            std::get_if<std::vector<std::size_t>>(&scenario.refresh->useful_set))
      refresh["useful"] = *indices;
    else
      refresh["useful"] = std::get<double>(scenario.refresh->useful_set);
    doc["refresh"] = std::move(refresh);
  }
  doc["checks"] = scenario.checks;
  return doc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("scenario config '" + path + "': " + e.what());
  }
  return scenario_from_json(doc);
}

void write_scenario(const Scenario& scenario, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario config '" + path + "'");
  out << scenario_to_json(scenario).dump(2) << '\n';
}

Scenario default_scenario() {
  Scenario scenario;
  scenario.name = "default";
  scenario.prompts = PromptSet::make(
      {PromptInstance::make("two-action", {"hit", "miss"}, {1.0, 0.0}, {0.5, 0.5}),
       binary_instance(0.1, "binary-0.1"),
       PromptInstance::make("quad", {"y0", "y1", "y2", "y3"}, {0.8, 0.5, 0.2, 0.0},
                            {0.4, 0.3, 0.2, 0.1})});
  snap_prompt_set(scenario.prompts);
  return scenario;
}

bool RunReport::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

void write_report_csv(const RunReport& report, std::ostream& out) {
  out << "check,bound,measured,pass\n";
  for (const auto& c : report.checks)
    out << c.name << ',' << format_sci(c.bound) << ',' << format_sci(c.measured) << ','
        << (c.pass ? 1 : 0) << '\n';
}

void write_report_records(const RunReport& report, std::ostream& out) {
  out << json{{"scenario", report.scenario}, {"seed", report.seed}}.dump() << '\n';
  for (const auto& c : report.checks)
    out << json{{"check", c.name}, {"bound", c.bound}, {"measured", c.measured},
                {"pass", c.pass}}
               .dump()
        << '\n';
}

// ---------------------------------------------------------------------------
// property checks

namespace {

struct CheckContext {
  const Scenario& scenario;
  std::uint64_t seed;
  bool deep;

  SplitRng rng(const std::string& label) const { return SplitRng(seed).derive(label); }
  std::size_t trials() const { return deep ? 100000 : 10000; }
};

CheckResult make_result(const std::string& name, double bound, double measured,
                        bool pass) {
  CheckResult out;
  out.name = name;
  out.bound = bound;
  out.measured = measured;
  out.pass = pass;
  return out;
}

double single_prompt_value(const PromptInstance& prompt, const Vec& probs, double beta) {
  auto set = PromptSet::make({prompt});
  TabularPolicy policy;
  policy.set(prompt.id, probs);
  return boltzmann::rlvr_value(policy, set, Temperature(beta));
}

CheckResult check_gibbs_optimality(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("gibbs_optimality");
  double worst = -core::kInf;
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(ctx.scenario.beta));
    double j_star = single_prompt_value(prompt, target.target, ctx.scenario.beta);
    for (int trial = 0; trial < 200; ++trial) {
      double j_q =
          single_prompt_value(prompt, rng.simplex_point(prompt.size()), ctx.scenario.beta);
      worst = std::max(worst, j_q - j_star);
    }
  }
  return make_result("gibbs_optimality", 1e-10, worst, worst <= 1e-10);
}

CheckResult check_value_identity(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("value_identity");
  double worst = 0.0;
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(ctx.scenario.beta));
    double j_star = single_prompt_value(prompt, target.target, ctx.scenario.beta);
    for (int trial = 0; trial < 200; ++trial) {
      Vec q = rng.simplex_point(prompt.size());
      double j_q = single_prompt_value(prompt, q, ctx.scenario.beta);
      if (std::isinf(j_q)) continue;
      double identity = ctx.scenario.beta * core::kl_divergence(q, target.target);
      worst = std::max(worst, std::abs((j_star - j_q) - identity));
    }
  }
  return make_result("value_identity", 1e-10, worst, worst <= 1e-10);
}

CheckResult check_matching_law(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("matching_law");
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& prompt =
        ctx.scenario.prompts.prompts[trial % ctx.scenario.prompts.prompts.size()];
    Vec sampler = rng.simplex_point(prompt.size());
    double mass = 0.0;
    for (double& v : sampler) {
      v = std::max(v, 1e-6);
      mass += v;
    }
    for (double& v : sampler) v /= mass;
    Vec target = rng.simplex_point(prompt.size());
    double scale = rng.uniform(0.5, 2.0);
    auto induced = projection::induced_target(projection::SamplerWeightPair::make(
        prompt.id, sampler, projection::matching_weight(sampler, target, scale)));
    for (std::size_t i = 0; i < target.size(); ++i)
      worst = std::max(worst, std::abs(induced.distribution[i] - target[i]));
  }
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(ctx.scenario.beta));
    Vec weight = projection::matching_weight(prompt.reference, target.target, 1.0);
    for (std::size_t i = 0; i < weight.size(); ++i)
      worst = std::max(worst, std::abs(weight[i] - target.canonical_weight[i]));
  }
  return make_result("matching_law", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_weight_identity(const CheckContext& ctx) {
  double worst = 0.0;
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(ctx.scenario.beta));
    double mean = 0.0;
    for (std::size_t i = 0; i < prompt.size(); ++i)
      mean += prompt.reference[i] * target.canonical_weight[i];
    worst = std::max(worst, std::abs(mean - 1.0));
  }
  return make_result("weight_identity", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_support_gap(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("support_gap");
  double beta = ctx.scenario.beta;
  double worst = 0.0;
  bool minimizer_close = true;
  for (int trial = 0; trial < 20; ++trial) {
    SplitRng sub = rng.derive(trial);
    auto prompt = random_prompt_instance(sub, 3, "support");
    auto target = boltzmann::build_target(prompt, Temperature(beta));
    std::size_t drop = sub.next_u64() % 3;
    bool pair_support = sub.next_unit() < 0.7;

    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < 3; ++i)
      if (i != drop) support.push_back(i);
    if (!pair_support) support.resize(1);

    double mass = 0.0;
    for (std::size_t i : support) mass += target.target[i];
    double oracle = beta * std::log(1.0 / mass);

    double j_star = single_prompt_value(prompt, target.target, beta);
    double best_gap = core::kInf;
    Vec best(3, 0.0);
    if (support.size() == 1) {
      Vec q(3, 0.0);
      q[support[0]] = 1.0;
      best_gap = j_star - single_prompt_value(prompt, q, beta);
      best = q;
    } else {
      for (int g = 0; g <= 200; ++g) {
        Vec q(3, 0.0);
        q[support[0]] = double(g) / 200.0;
        q[support[1]] = 1.0 - double(g) / 200.0;
        double gap = j_star - single_prompt_value(prompt, q, beta);
        if (gap < best_gap) {
          best_gap = gap;
          best = q;
        }
      }
    }
    worst = std::max(worst, std::abs(oracle - best_gap));

    Vec conditional(3, 0.0);
    for (std::size_t i : support) conditional[i] = target.target[i] / mass;
    if (core::total_variation(best, conditional) > 2e-2) minimizer_close = false;
  }
  return make_result("support_gap", 2e-2, worst, worst <= 2e-2 && minimizer_close);
}

CheckResult check_coverage_miss(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("coverage_miss");
  std::size_t trials = ctx.trials();
  double worst = 0.0;
  // every cell keeps the expected miss count large enough for the normal
  // three-sigma yardstick to be honest
  for (double p : {0.05, 0.1, 0.2}) {
    for (std::size_t n : {4, 8, 16}) {
      double exact = bounds::evaluate("coverage_miss", {{"p", p}, {"n", double(n)}}).bound;
      SplitRng cell = rng.derive(std::to_string(p) + "/" + std::to_string(n));
      std::size_t misses = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        bool hit = false;
        for (std::size_t d = 0; d < n; ++d)
          if (cell.next_unit() < p) hit = true;
        if (!hit) ++misses;
      }
      double freq = double(misses) / double(trials);
      double sigma = std::sqrt(exact * (1.0 - exact) / double(trials));
      worst = std::max(worst, std::abs(freq - exact) / sigma);
    }
  }
  return make_result("coverage_miss", 3.0, worst, worst <= 3.0);
}

CheckResult check_binary_c2(const CheckContext&) {
  double worst = 0.0;
  for (double p : {0.05, 0.1, 0.2, 0.5}) {
    for (double beta : {0.5, 1.0, 2.0}) {
      auto target = boltzmann::build_target(binary_instance(p, "c2"), Temperature(beta));
      double direct = p * target.canonical_weight[0] * target.canonical_weight[0] +
                      (1.0 - p) * target.canonical_weight[1] * target.canonical_weight[1];
      double closed = bounds::evaluate("binary_c2", {{"p", p}, {"beta", beta}}).bound;
      worst = std::max(worst, std::abs(closed - direct));
    }
  }
  return make_result("binary_c2", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_binary_frontier(const CheckContext&) {
  double worst = -core::kInf;
  for (double p : {0.05, 0.1, 0.2, 0.5}) {
    for (double beta : {0.5, 1.0, 2.0}) {
      auto target = boltzmann::build_target(binary_instance(p, "frontier"), Temperature(beta));
      double eta = 1.0 - target.target[0];
      double frontier = bounds::evaluate("binary_frontier", {{"eta", eta}, {"p", p}}).bound;
      double c2 = bounds::evaluate("binary_c2", {{"p", p}, {"beta", beta}}).bound;
      worst = std::max(worst, frontier - c2);
    }
  }
  return make_result("binary_frontier", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_hoeffding_partition(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("hoeffding_partition_tail");
  std::size_t trials = ctx.trials();
  const std::size_t n = 64;
  double worst = -core::kInf;
  for (double beta : {0.5, 1.0}) {
    auto prompt = binary_instance(0.5, "hoeffding");
    auto target = boltzmann::build_target(prompt, Temperature(beta));
    double r_beta =
        bounds::formulas::reward_spread(prompt.r_min(), prompt.r_max(), beta);
    double w_hi = std::exp(1.0 / beta), w_lo = 1.0;
    SplitRng cell = rng.derive(std::to_string(beta));
    std::vector<double> deviations(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      double acc = 0.0;
      for (std::size_t d = 0; d < n; ++d) acc += cell.next_unit() < 0.5 ? w_hi : w_lo;
      deviations[t] = std::abs(acc / double(n) - target.partition);
    }
    for (double c : {0.05, 0.1, 0.15, 0.2}) {
      double t_val = c * r_beta;
      double tail = bounds::formulas::hoeffding_partition_tail(double(n), t_val, r_beta);
      std::size_t exceed = 0;
      for (double d : deviations)
        if (d >= t_val) ++exceed;
      worst = std::max(worst, double(exceed) / double(trials) - tail);
    }
  }
  return make_result("hoeffding_partition_tail", 0.0, worst, worst <= 0.0);
}

CheckResult check_capped_projection(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("capped_projection");
  double worst = -core::kInf;
  bool inactive_exact = true;
  for (int trial = 0; trial < 10; ++trial) {
    SplitRng sub = rng.derive(trial);
    Vec sampler = sub.simplex_point(3);
    for (double& v : sampler) v = std::max(v, 0.1);
    double mass = sampler[0] + sampler[1] + sampler[2];
    for (double& v : sampler) v /= mass;

    Vec ratio(3);
    double mean = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      ratio[i] = sub.uniform(0.2, 3.0);
      mean += sampler[i] * ratio[i];
    }
    for (double& v : ratio) v /= mean;

    double top = *std::max_element(ratio.begin(), ratio.end());
    double cap = sub.uniform(1.0 + 0.2 * (top - 1.0), 1.0 + 0.8 * (top - 1.0));
    auto wf = projection::capped_projection(sampler, ratio, cap, 1.0);

    Vec tilted(3);
    for (std::size_t i = 0; i < 3; ++i) tilted[i] = sampler[i] * ratio[i];
    double grid_min = core::kInf;
    const int res = 100;
    for (int a = 0; a <= res; ++a) {
      for (int b = 0; b <= res; ++b) {
        double u0 = cap * double(a) / double(res);
        double u1 = cap * double(b) / double(res);
        double u2 = (1.0 - sampler[0] * u0 - sampler[1] * u1) / sampler[2];
        if (u2 < 0.0 || u2 > cap) continue;
        Vec moved = {sampler[0] * u0, sampler[1] * u1, sampler[2] * u2};
        grid_min = std::min(grid_min, core::kl_divergence(moved, tilted));
      }
    }
    worst = std::max(worst, wf.bias - grid_min);

    auto inactive = projection::capped_projection(sampler, ratio, top * 1.1, 1.0);
    if (inactive.bias != 0.0 || inactive.cap_active) inactive_exact = false;
  }
  return make_result("capped_projection", 1e-12, worst, worst <= 1e-12 && inactive_exact);
}

CheckResult check_e2e_certificate(const CheckContext& ctx) {
  auto decomposition =
      fitting::e2e_decompose(ctx.scenario.prompts, 8192, Temperature(ctx.scenario.beta),
                             ctx.scenario.fit, SplitRng(ctx.seed).derive("e2e").next_u64());
  bool pass = decomposition.in_regime && decomposition.dominated &&
              decomposition.actual < 1e-3;
  return make_result("e2e_certificate", decomposition.assembled, decomposition.actual, pass);
}

CheckResult check_exact_path(const CheckContext& ctx) {
  double worst = 0.0;
  double beta = ctx.scenario.beta;
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    for (std::size_t k = 1; k <= 8; ++k) {
      Vec path = mirror::exact_path(prompt.reference, k, Temperature(beta), prompt);
      Vec target = boltzmann::build_target(prompt, Temperature(beta / double(k))).target;
      for (std::size_t i = 0; i < path.size(); ++i)
        worst = std::max(worst, std::abs(path[i] - target[i]));
    }
  }
  return make_result("exact_path_target", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_refresh_dominance(const CheckContext&) {
  double worst = -core::kInf;
  bool strict = true;
  for (double p0 : {0.02, 0.05, 0.1, 0.2}) {
    for (std::size_t k : {1, 2, 3, 4, 6}) {
      for (std::size_t n : {4, 8}) {
        mirror::RefreshPlan plan;
        plan.rounds = k;
        plan.rollouts = n;
        plan.beta = 1.0;
        plan.useful_set = std::vector<std::size_t>{0};
        auto report = mirror::refresh_coverage(plan, binary_instance(p0, "dominance"));
        worst = std::max(worst, report.p_one - report.p_refresh);
        if (k > 1 && report.p_refresh <= report.p_one) strict = false;
      }
    }
  }
  return make_result("refresh_dominance", 1e-12, worst, worst <= 1e-12 && strict);
}

CheckResult check_pmd_regret(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("pmd_regret");
  Temperature beta(ctx.scenario.beta);
  const auto& prompts = ctx.scenario.prompts;
  double worst = -core::kInf;

  TabularPolicy comparator;
  for (const auto& p : prompts.prompts)
    comparator.set(p.id, mirror::exact_path(p.reference, 4, beta, p));

  for (int trial = 0; trial < 10; ++trial) {
    mirror::RefreshPlan plan;
    plan.rounds = 4;
    plan.rollouts = 4;
    plan.beta = ctx.scenario.beta;
    plan.useful_set = 0.5;
    auto run = mirror::run_iterative(plan, prompts, ctx.scenario.fit,
                                     rng.derive("exact").derive(trial).next_u64(), true);
    auto report = mirror::inexact_regret(run.trace, prompts, beta, comparator);
    worst = std::max(worst, report.lhs - report.rhs);
  }

  for (int trial = 0; trial < 10; ++trial) {
    SplitRng sub = rng.derive("perturbed").derive(trial);
    mirror::PmdTrace trace;
    TabularPolicy current;
    for (const auto& p : prompts.prompts) current.set(p.id, p.reference);
    for (std::size_t k = 0; k < 4; ++k) {
      mirror::RoundRecord rec;
      rec.round = k;
      rec.reference = current;
      for (const auto& p : prompts.prompts) {
        Vec exact = mirror::exact_step(current.at(p.id), p, beta);
        rec.exact_target.set(p.id, exact);
        Vec noisy = exact;
        double sum = 0.0;
        for (double& v : noisy) {
          v *= std::exp(sub.uniform(-0.25, 0.25));
          sum += v;
        }
        for (double& v : noisy) v /= sum;
        rec.fitted.set(p.id, noisy);
      }
      current = rec.fitted;
      trace.rounds.push_back(std::move(rec));
    }
    auto report = mirror::inexact_regret(trace, prompts, beta, comparator);
    worst = std::max(worst, report.lhs - report.rhs);
  }
  return make_result("pmd_regret", 1e-12, worst, worst <= 1e-12);
}

CheckResult check_local_transfer(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("local_transfer");
  double kappa = projection::local_transfer_constants(0.2).kappa;
  double worst = -core::kInf;
  std::size_t accepted = 0, attempts = 0;
  while (accepted < 10000 && attempts < 1000000) {
    ++attempts;
    Vec p = rng.simplex_point(4);
    double mass = 0.0;
    for (double& v : p) {
      v = std::max(v, 0.05);
      mass += v;
    }
    for (double& v : p) v /= mass;
    Vec q = p;
    double sum = 0.0;
    for (double& v : q) {
      v *= 1.0 + rng.uniform(-0.15, 0.15);
      sum += v;
    }
    for (double& v : q) v /= sum;
    if (fitting::rho_of(p, q) > 0.2) continue;
    ++accepted;
    worst = std::max(worst,
                     core::kl_divergence(q, p) - kappa * core::kl_divergence(p, q));
  }

  bool monotone = accepted == 10000;
  double prev_forward = core::kInf, prev_reverse = -core::kInf;
  for (double delta : {0.3, 0.25, 0.2, 0.15, 0.1}) {
    auto pair = projection::rare_action_family(delta);
    if (pair.forward_kl >= prev_forward || pair.reverse_kl <= prev_reverse)
      monotone = false;
    prev_forward = pair.forward_kl;
    prev_reverse = pair.reverse_kl;
  }
  return make_result("local_transfer", 1e-12, worst, worst <= 1e-12 && monotone);
}

CheckResult check_token_identity(const CheckContext& ctx) {
  SplitRng rng = ctx.rng("token_identity");
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    SplitRng sub = rng.derive(trial);
    std::vector<Vec> steps(2);
    for (auto& step : steps) {
      double a = sub.uniform(0.15, 0.85);
      step = {a, 1.0 - a};
    }
    auto space = projection::SequenceSpace::from_steps(steps);

    Vec weight(space.size());
    double z = 0.0;
    for (std::size_t i = 0; i < space.size(); ++i) {
      weight[i] = std::exp(sub.next_unit());
      z += space.joint[i] * weight[i];
    }
    for (double& w : weight) w /= z;
    double mean = 0.0;
    for (std::size_t i = 0; i < space.size(); ++i) mean += space.joint[i] * weight[i];
    for (double& w : weight) w /= mean;

    auto coeffs = projection::token_coefficients(space, weight);
    for (int pol = 0; pol < 5; ++pol) {
      auto policy = projection::AutoregressivePolicy::random(2, 2, sub);
      double seq = projection::sequence_weighted_nll(space, weight, policy);
      double tok = projection::token_weighted_nll(space, coeffs, policy);
      worst = std::max(worst, std::abs(seq - tok));
    }
  }
  return make_result("token_identity", 1e-10, worst, worst <= 1e-10);
}

CheckResult check_lattice_price(const CheckContext& ctx) {
  double worst = -core::kInf;
  double beta = ctx.scenario.beta;
  for (const auto& prompt : ctx.scenario.prompts.prompts) {
    for (double ratio : {1.3, 2.7, 6.4}) {
      auto report = mirror::effective_temperature(beta, beta / ratio, prompt);
      worst = std::max({worst, report.measured_sup_log - report.sup_log_bound,
                        report.measured_tv - report.tv_bound,
                        report.lattice_error - report.lattice_bound});
    }
  }
  return make_result("lattice_price", 1e-12, worst, worst <= 1e-12);
}

using CheckFn = CheckResult (*)(const CheckContext&);

const std::vector<std::pair<std::string, CheckFn>>& check_table() {
  static const std::vector<std::pair<std::string, CheckFn>> table = {
      {"gibbs_optimality", check_gibbs_optimality},
      {"value_identity", check_value_identity},
      {"matching_law", check_matching_law},
      {"weight_identity", check_weight_identity},
      {"support_gap", check_support_gap},
      {"coverage_miss", check_coverage_miss},
      {"binary_c2", check_binary_c2},
      {"binary_frontier", check_binary_frontier},
      {"hoeffding_partition_tail", check_hoeffding_partition},
      {"capped_projection", check_capped_projection},
      {"e2e_certificate", check_e2e_certificate},
      {"exact_path_target", check_exact_path},
      {"refresh_dominance", check_refresh_dominance},
      {"pmd_regret", check_pmd_regret},
      {"local_transfer", check_local_transfer},
      {"token_identity", check_token_identity},
      {"lattice_price", check_lattice_price},
  };
  return table;
}

}  // namespace

std::vector<std::string> check_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : check_table()) names.push_back(name);
  return names;
}

CheckResult run_check(const std::string& name, const Scenario& scenario,
                      std::uint64_t seed, bool deep) {
  for (const auto& [key, fn] : check_table())
    if (key == name) return fn(CheckContext{scenario, seed, deep});
  throw std::invalid_argument("unknown check \"" + name + "\"");
}

// ---------------------------------------------------------------------------
// subcommands

namespace {

struct CliOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool deep = false;
  std::string format = "csv";
};

Scenario resolve_scenario(const CliOptions& options) {
  return options.config.empty() ? default_scenario() : load_scenario(options.config);
}

// With --out, both forms are written next to each other and the paths are
// printed; without it, the chosen form goes to stdout.
std::vector<std::string> emit_table(const Table& table, const CliOptions& options,
                                    const std::string& stem) {
  if (options.out.empty()) {
    if (options.format == "records")
      write_table_records(table, std::cout);
    else
      write_table_csv(table, std::cout);
    return {};
  }
  namespace fs = std::filesystem;
  fs::create_directories(options.out);
  std::vector<std::string> files;
  for (const char* kind : {"csv", "records"}) {
    fs::path path = fs::path(options.out) / (stem + "." + kind);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    if (std::string(kind) == "csv")
      write_table_csv(table, out);
    else
      write_table_records(table, out);
    files.push_back(path.string());
    std::cout << path.string() << '\n';
  }
  return files;
}

int cmd_target(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  Table table;
  table.columns = {"prompt", "completion", "reference", "reward", "target", "weight"};
  for (const auto& prompt : scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(scenario.beta));
    for (std::size_t i = 0; i < prompt.size(); ++i)
      table.rows.push_back({{"prompt", prompt.id},
                            {"completion", prompt.completions[i]},
                            {"reference", prompt.reference[i]},
                            {"reward", prompt.reward[i]},
                            {"target", target.target[i]},
                            {"weight", target.canonical_weight[i]}});
  }
  emit_table(table, options, scenario.name + "-target");
  return 0;
}

int cmd_project(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  Table table;
  table.columns = {"prompt", "scheme", "mean_weight", "gap"};
  for (const auto& prompt : scenario.prompts.prompts) {
    auto target = boltzmann::build_target(prompt, Temperature(scenario.beta));
    std::vector<std::pair<std::string, Vec>> schemes;
    schemes.emplace_back("uniform", Vec(prompt.size(), 1.0));
    bool raw_ok = true;
    double raw_mass = 0.0;
    for (double r : prompt.reward) {
      if (r < 0.0) raw_ok = false;
      raw_mass += r;
    }
    if (raw_ok && raw_mass > 0.0) schemes.emplace_back("raw-reward", prompt.reward);
    Vec exp_reward(prompt.size());
    for (std::size_t i = 0; i < prompt.size(); ++i)
      exp_reward[i] = std::exp(prompt.reward[i] / scenario.beta);
    schemes.emplace_back("exp-reward", exp_reward);
    schemes.emplace_back("canonical", target.canonical_weight);

    for (const auto& [name, weight] : schemes) {
      auto pair = projection::SamplerWeightPair::make(prompt.id, prompt.reference, weight);
      double gap = projection::mismatch_gap(pair, prompt, Temperature(scenario.beta));
      table.rows.push_back({{"prompt", prompt.id},
                            {"scheme", name},
                            {"mean_weight", pair.mean_weight()},
                            {"gap", gap}});
    }
  }
  emit_table(table, options, scenario.name + "-project");
  return 0;
}

int cmd_oneshot(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  auto decomposition =
      fitting::e2e_decompose(scenario.prompts, scenario.rollouts,
                             Temperature(scenario.beta), scenario.fit, options.seed);
  Table table;
  table.columns = {"metric", "value"};
  auto row = [&](const std::string& metric, json value) {
    table.rows.push_back({{"metric", metric}, {"value", std::move(value)}});
  };
  row("draws", scenario.rollouts);
  row("beta", scenario.beta);
  row("approximation", decomposition.approximation);
  row("delta_gen", decomposition.delta_gen);
  row("delta_norm", decomposition.delta_norm);
  row("eps_opt", decomposition.eps_opt);
  row("rho", decomposition.rho);
  row("kappa", decomposition.kappa);
  row("assembled", decomposition.assembled);
  row("actual", decomposition.actual);
  row("in_regime", decomposition.in_regime);
  row("dominated", decomposition.dominated);
  emit_table(table, options, scenario.name + "-oneshot");

  if (!options.out.empty()) {
    auto data = estimator::make_dataset(scenario.prompts, scenario.rollouts,
                                        Temperature(scenario.beta), options.seed);
    namespace fs = std::filesystem;
    fs::path path = fs::path(options.out) / (scenario.name + "-dataset.records");
    std::ofstream out(path);
    data.write_records(out);
    std::cout << path.string() << '\n';
  }
  if (decomposition.in_regime && !decomposition.dominated) {
    std::cerr << "check failed: e2e_certificate\n";
    return 1;
  }
  return 0;
}

int cmd_iterate(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  mirror::RefreshPlan plan;
  if (scenario.refresh) {
    plan = *scenario.refresh;
  } else {
    plan.rounds = 4;
    plan.rollouts = scenario.rollouts;
    plan.beta = scenario.beta;
    plan.useful_set = 0.5;
  }
  TabularPolicy comparator;
  for (const auto& p : scenario.prompts.prompts)
    comparator.set(p.id,
                   mirror::exact_path(p.reference, plan.rounds, Temperature(plan.beta), p));
  plan.comparator = comparator;

  auto run = mirror::run_iterative(plan, scenario.prompts, scenario.fit, options.seed, false);

  Table table;
  table.columns = {"scope", "metric", "value"};
  auto row = [&](const std::string& scope, const std::string& metric, json value) {
    table.rows.push_back(
        {{"scope", scope}, {"metric", metric}, {"value", std::move(value)}});
  };
  bool dominance = true;
  for (const auto& prompt : scenario.prompts.prompts) {
    auto coverage = mirror::refresh_coverage(plan, prompt);
    row(prompt.id, "p_refresh", coverage.p_refresh);
    row(prompt.id, "p_one", coverage.p_one);
    row(prompt.id, "exp_lower", coverage.exp_lower);
    row(prompt.id, "gamma", coverage.gamma);
    row(prompt.id, "vacuous", coverage.vacuous);
    row(prompt.id, "dominance", coverage.dominance);
    if (!coverage.dominance) dominance = false;
  }
  for (const auto& rec : run.trace.rounds) {
    std::string scope = "round-" + std::to_string(rec.round);
    row(scope, "hit_draws", rec.hit_draws);
    row(scope, "drift_raw", rec.drift_raw);
    row(scope, "inner_excess", rec.inner_excess);
  }
  row("run", "refreshed_hit_draws", run.refreshed_hit_draws);
  row("run", "oneshot_hit_draws", run.oneshot_hit_draws);
  row("run", "refreshed_hit", run.refreshed_hit);
  row("run", "oneshot_hit", run.oneshot_hit);
  emit_table(table, options, scenario.name + "-iterate");

  if (!options.out.empty()) {
    namespace fs = std::filesystem;
    fs::path path = fs::path(options.out) / (scenario.name + "-trace.records");
    std::ofstream out(path);
    run.trace.write_records(out);
    std::cout << path.string() << '\n';
  }
  if (!dominance) {
    std::cerr << "check failed: refresh_dominance\n";
    return 1;
  }
  return 0;
}

int cmd_bounds(const CliOptions& options) {
  Table table;
  table.columns = {"name", "anchor", "formula", "params"};
  for (const auto& spec : bounds::catalog()) {
    std::string params;
    for (const auto& p : spec.params) {
      if (!params.empty()) params += ' ';
      params += p;
    }
    table.rows.push_back({{"name", spec.name},
                          {"anchor", spec.anchor},
                          {"formula", spec.formula},
                          {"params", params}});
  }
  emit_table(table, options, "bounds-catalog");
  return 0;
}

int cmd_sweep(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  Table table;
  table.columns = {"p", "beta", "n", "coverage_miss", "binary_c2", "binary_frontier"};
  for (double p : {0.05, 0.1, 0.2}) {
    for (double beta : {0.5, 1.0, 2.0}) {
      for (std::size_t n : {8, 64}) {
        double miss = bounds::evaluate("coverage_miss", {{"p", p}, {"n", double(n)}}).bound;
        double c2 = bounds::evaluate("binary_c2", {{"p", p}, {"beta", beta}}).bound;
        double success =
            bounds::evaluate("binary_target_success", {{"p", p}, {"beta", beta}}).bound;
        double frontier =
            bounds::evaluate("binary_frontier", {{"eta", 1.0 - success}, {"p", p}}).bound;
        table.rows.push_back({{"p", p},
                              {"beta", beta},
                              {"n", n},
                              {"coverage_miss", miss},
                              {"binary_c2", c2},
                              {"binary_frontier", frontier}});
      }
    }
  }
  emit_table(table, options, scenario.name + "-sweep");
  return 0;
}

int cmd_verify(const CliOptions& options) {
  auto scenario = resolve_scenario(options);
  auto requested = scenario.checks.empty() ? check_names() : scenario.checks;

  RunReport report;
  report.scenario = scenario.name;
  report.seed = options.seed;
  auto start = std::chrono::steady_clock::now();
  for (const auto& name : requested)
    report.checks.push_back(run_check(name, scenario, options.seed, options.deep));
  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();

  if (options.out.empty()) {
    if (options.format == "records")
      write_report_records(report, std::cout);
    else
      write_report_csv(report, std::cout);
  } else {
    namespace fs = std::filesystem;
    fs::create_directories(options.out);
    fs::path csv = fs::path(options.out) / (scenario.name + "-report.csv");
    fs::path records = fs::path(options.out) / (scenario.name + "-report.records");
    {
      std::ofstream out(csv);
      write_report_csv(report, out);
    }
    {
      std::ofstream out(records);
      write_report_records(report, out);
    }
    report.files = {csv.string(), records.string()};
    std::cout << csv.string() << '\n' << records.string() << '\n';
  }
  std::cerr << "verify: " << report.checks.size() << " checks in "
            << std::llround(report.wall_ms) << " ms\n";

  for (const auto& c : report.checks) {
    if (!c.pass) {
      std::cerr << "check failed: " << c.name << '\n';
      return 1;
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"tilted-target laboratory: weighted-SFT replacements for "
               "KL-regularized reward maximization"};
  app.require_subcommand(1);
  CliOptions options;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config, "scenario config path (JSON)");
    sub->add_option("--seed", options.seed, "base random seed");
    sub->add_option("--out", options.out, "directory for report and record files");
    sub->add_flag("--deep", options.deep, "raise Monte-Carlo trials from 1e4 to 1e5");
    sub->add_option("--format", options.format, "stdout format")
        ->check(CLI::IsMember({"csv", "records"}));
  };

  auto* target = app.add_subcommand("target", "tilted target and canonical weights per prompt");
  auto* project = app.add_subcommand("project", "induced targets and mismatch gaps per weighting scheme");
  auto* oneshot = app.add_subcommand("oneshot", "sample, fit, and decompose the one-shot value gap");
  auto* iterate = app.add_subcommand("iterate", "refreshed sampling rounds and coverage comparison");
  auto* bounds_cmd = app.add_subcommand("bounds", "dump the inequality catalog");
  auto* verify = app.add_subcommand("verify", "run the property-check suite");
  auto* sweep = app.add_subcommand("sweep", "coverage/second-moment grid over p, beta, N");
  for (auto* sub : {target, project, oneshot, iterate, bounds_cmd, verify, sweep})
    add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(target)) return cmd_target(options);
    if (app.got_subcommand(project)) return cmd_project(options);
    if (app.got_subcommand(oneshot)) return cmd_oneshot(options);
    if (app.got_subcommand(iterate)) return cmd_iterate(options);
    if (app.got_subcommand(bounds_cmd)) return cmd_bounds(options);
    if (app.got_subcommand(verify)) return cmd_verify(options);
    if (app.got_subcommand(sweep)) return cmd_sweep(options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace tiltlab::harness

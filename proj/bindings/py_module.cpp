// Python surface for the library: tilted targets and values, weighted-SFT
// projections, reference-sampled datasets and fits, mirror-descent paths,
// the bound registry, and the property-check suite.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <variant>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/bounds.hpp"
#include "tiltlab/core.hpp"
#include "tiltlab/estimator.hpp"
#include "tiltlab/fitting.hpp"
#include "tiltlab/harness.hpp"
#include "tiltlab/mirror.hpp"
#include "tiltlab/projection.hpp"

namespace py = pybind11;
using namespace tiltlab;
using core::PromptInstance;
using core::PromptSet;
using core::TabularPolicy;
using core::Temperature;
using core::Vec;

namespace {

TabularPolicy policy_from_dict(const std::map<std::string, Vec>& table) {
  TabularPolicy policy;
  for (const auto& [id, probs] : table) policy.set(id, probs);
  return policy;
}

std::map<std::string, Vec> policy_to_dict(const TabularPolicy& policy) {
  return policy.table;
}

}  // namespace

PYBIND11_MODULE(_tiltlab, m) {
  m.doc() = "Exponentially tilted policy targets, weighted-SFT projections, and "
            "their correctness certificates on enumerable prompt spaces.";

  py::class_<PromptInstance>(m, "Prompt")
      .def(py::init([](std::string id, std::vector<std::string> completions, Vec reward,
                       Vec reference) {
             return PromptInstance::make(std::move(id), std::move(completions),
                                         std::move(reward), std::move(reference));
           }),
           py::arg("id"), py::arg("completions"), py::arg("reward"), py::arg("reference"))
      .def_readonly("id", &PromptInstance::id)
      .def_readonly("completions", &PromptInstance::completions)
      .def_readonly("reward", &PromptInstance::reward)
      .def_readonly("reference", &PromptInstance::reference)
      .def("__len__", &PromptInstance::size)
      .def("r_min", &PromptInstance::r_min)
      .def("r_max", &PromptInstance::r_max)
      .def("__repr__", [](const PromptInstance& p) {
        return "Prompt('" + p.id + "', n=" + std::to_string(p.size()) + ")";
      });

  py::class_<PromptSet>(m, "PromptSet")
      .def(py::init([](std::vector<PromptInstance> prompts, Vec weights) {
             return PromptSet::make(std::move(prompts), std::move(weights));
           }),
           py::arg("prompts"), py::arg("weights") = Vec{})
      .def_readonly("prompts", &PromptSet::prompts)
      .def_readonly("weights", &PromptSet::prompt_weights)
      .def("by_id", &PromptSet::by_id, py::return_value_policy::reference_internal)
      .def("__len__", [](const PromptSet& s) { return s.prompts.size(); });

  m.def("kl_divergence", &core::kl_divergence, py::arg("p"), py::arg("q"));
  m.def("chi_square", &core::chi_square, py::arg("p"), py::arg("q"));
  m.def("total_variation", &core::total_variation, py::arg("p"), py::arg("q"));
  m.def("softmax", &core::softmax, py::arg("logits"));

  py::class_<boltzmann::BoltzmannTarget>(m, "Target")
      .def_readonly("prompt_id", &boltzmann::BoltzmannTarget::prompt_id)
      .def_readonly("beta", &boltzmann::BoltzmannTarget::beta)
      .def_readonly("partition", &boltzmann::BoltzmannTarget::partition)
      .def_readonly("log_partition", &boltzmann::BoltzmannTarget::log_partition)
      .def_readonly("target", &boltzmann::BoltzmannTarget::target)
      .def_readonly("canonical_weight", &boltzmann::BoltzmannTarget::canonical_weight);

  m.def(
      "build_target",
      [](const PromptInstance& prompt, double beta) {
        return boltzmann::build_target(prompt, Temperature(beta));
      },
      py::arg("prompt"), py::arg("beta") = 1.0);

  m.def(
      "rlvr_value",
      [](const std::map<std::string, Vec>& policy, const PromptSet& prompts, double beta) {
        return boltzmann::rlvr_value(policy_from_dict(policy), prompts, Temperature(beta));
      },
      py::arg("policy"), py::arg("prompts"), py::arg("beta") = 1.0,
      "Mean reward minus beta times reverse KL to the reference, averaged over prompts.");

  m.def("matching_weight", &projection::matching_weight, py::arg("sampler"),
        py::arg("target"), py::arg("scale") = 1.0,
        "Weights making weighted SFT under the sampler reproduce the target.");

  m.def(
      "induced_target",
      [](const Vec& sampler, const Vec& weight) {
        auto induced =
            projection::induced_target(projection::SamplerWeightPair::make("_", sampler, weight));
        return py::make_tuple(induced.distribution, induced.mean_weight);
      },
      py::arg("sampler"), py::arg("weight"),
      "Distribution proportional to sampler times weight, with the mean weight.");

  m.def(
      "mismatch_gap",
      [](const Vec& sampler, const Vec& weight, const PromptInstance& prompt, double beta) {
        return projection::mismatch_gap(
            projection::SamplerWeightPair::make(prompt.id, sampler, weight), prompt,
            Temperature(beta));
      },
      py::arg("sampler"), py::arg("weight"), py::arg("prompt"), py::arg("beta") = 1.0,
      "Value lost by training toward the induced distribution instead of the tilt.");

  py::class_<projection::CappedProjection>(m, "CappedProjection")
      .def_readonly("capped", &projection::CappedProjection::capped)
      .def_readonly("alpha", &projection::CappedProjection::alpha)
      .def_readonly("bias", &projection::CappedProjection::bias)
      .def_readonly("cap_active", &projection::CappedProjection::cap_active);

  m.def("capped_projection", &projection::capped_projection, py::arg("sampler"),
        py::arg("density_ratio"), py::arg("cap"), py::arg("beta") = 1.0,
        "Water-filled unit-mean projection of the ratio under a hard weight cap.");

  py::class_<projection::TransferConstants>(m, "TransferConstants")
      .def_readonly("rho", &projection::TransferConstants::rho)
      .def_readonly("a_rho", &projection::TransferConstants::a_rho)
      .def_readonly("b_rho", &projection::TransferConstants::b_rho)
      .def_readonly("kappa", &projection::TransferConstants::kappa)
      .def_readonly("gamma", &projection::TransferConstants::gamma)
      .def_readonly("kappa_valid", &projection::TransferConstants::kappa_valid)
      .def_readonly("gamma_valid", &projection::TransferConstants::gamma_valid);

  m.def("local_transfer_constants", &projection::local_transfer_constants, py::arg("rho"));

  py::class_<projection::RareActionPair>(m, "RareActionPair")
      .def_readonly("delta", &projection::RareActionPair::delta)
      .def_readonly("epsilon", &projection::RareActionPair::epsilon)
      .def_readonly("p", &projection::RareActionPair::p)
      .def_readonly("q", &projection::RareActionPair::q)
      .def_readonly("forward_kl", &projection::RareActionPair::forward_kl)
      .def_readonly("reverse_kl", &projection::RareActionPair::reverse_kl);

  m.def("rare_action_family", &projection::rare_action_family, py::arg("delta"));

  py::class_<estimator::WeightedDataset>(m, "WeightedDataset")
      .def_readonly("beta", &estimator::WeightedDataset::beta)
      .def("prompt_ids",
           [](const estimator::WeightedDataset& data) {
             std::vector<std::string> ids;
             for (const auto& f : data.fragments) ids.push_back(f.prompt_id);
             return ids;
           })
      .def("zhat",
           [](const estimator::WeightedDataset& data, const std::string& id) {
             return data.by_id(id).zhat;
           },
           py::arg("prompt_id"))
      .def("mean_weight",
           [](const estimator::WeightedDataset& data, const std::string& id) {
             return data.by_id(id).mean_weight();
           },
           py::arg("prompt_id"))
      .def("record_count",
           [](const estimator::WeightedDataset& data, const std::string& id) {
             return data.by_id(id).records.size();
           },
           py::arg("prompt_id"))
      .def("to_records", [](const estimator::WeightedDataset& data) {
        std::ostringstream out;
        data.write_records(out);
        return out.str();
      });

  m.def(
      "make_dataset",
      [](const PromptSet& prompts, std::size_t n, double beta, std::uint64_t seed) {
        return estimator::make_dataset(prompts, n, Temperature(beta), seed);
      },
      py::arg("prompts"), py::arg("n"), py::arg("beta") = 1.0, py::arg("seed") = 0,
      "N reference draws per prompt with self-normalized canonical weights.");

  py::class_<fitting::FitConfig>(m, "FitConfig")
      .def(py::init([](double step_size, std::size_t steps, std::size_t minibatch,
                       std::uint64_t seed, const std::string& optimizer) {
             fitting::FitConfig config;
             config.step_size = step_size;
             config.steps = steps;
             config.minibatch = minibatch;
             config.seed = seed;
             if (optimizer == "full")
               config.kind = fitting::OptimizerKind::FullGradient;
             else if (optimizer == "sgd")
               config.kind = fitting::OptimizerKind::Stochastic;
             else
               throw py::value_error("optimizer must be 'full' or 'sgd'");
             return config;
           }),
           py::arg("step_size") = 0.5, py::arg("steps") = 4000, py::arg("minibatch") = 32,
           py::arg("seed") = 0, py::arg("optimizer") = "full")
      .def_readwrite("step_size", &fitting::FitConfig::step_size)
      .def_readwrite("steps", &fitting::FitConfig::steps)
      .def_readwrite("minibatch", &fitting::FitConfig::minibatch)
      .def_readwrite("seed", &fitting::FitConfig::seed);

  m.def(
      "fit",
      [](const estimator::WeightedDataset& data, const PromptSet& prompts,
         const fitting::FitConfig& config) {
        auto result = fitting::fit(data, prompts, config);
        return py::make_tuple(policy_to_dict(result.policy.to_tabular()), result.trace.loss);
      },
      py::arg("dataset"), py::arg("prompts"), py::arg("config") = fitting::FitConfig{},
      "Softmax fit of the weighted NLL; returns (policy dict, loss trace).");

  m.def(
      "rho_of", [](const Vec& target, const Vec& policy) { return fitting::rho_of(target, policy); },
      py::arg("target"), py::arg("policy"),
      "Largest relative deviation of the policy from the target.");

  py::class_<fitting::GapDecomposition>(m, "GapDecomposition")
      .def_readonly("approximation", &fitting::GapDecomposition::approximation)
      .def_readonly("delta_gen", &fitting::GapDecomposition::delta_gen)
      .def_readonly("delta_norm", &fitting::GapDecomposition::delta_norm)
      .def_readonly("eps_opt", &fitting::GapDecomposition::eps_opt)
      .def_readonly("rho", &fitting::GapDecomposition::rho)
      .def_readonly("kappa", &fitting::GapDecomposition::kappa)
      .def_readonly("assembled", &fitting::GapDecomposition::assembled)
      .def_readonly("actual", &fitting::GapDecomposition::actual)
      .def_readonly("in_regime", &fitting::GapDecomposition::in_regime)
      .def_readonly("dominated", &fitting::GapDecomposition::dominated);

  m.def(
      "e2e_decompose",
      [](const PromptSet& prompts, std::size_t n, double beta, const fitting::FitConfig& config,
         std::uint64_t seed) {
        return fitting::e2e_decompose(prompts, n, Temperature(beta), config, seed);
      },
      py::arg("prompts"), py::arg("n"), py::arg("beta") = 1.0,
      py::arg("config") = fitting::FitConfig{}, py::arg("seed") = 0,
      "Certified split of the fitted policy's value gap into its sources.");

  m.def(
      "exact_step",
      [](const Vec& policy, const PromptInstance& prompt, double beta) {
        return mirror::exact_step(policy, prompt, Temperature(beta));
      },
      py::arg("policy"), py::arg("prompt"), py::arg("beta") = 1.0,
      "One closed-form mirror step: renormalized policy times exp(r/beta).");

  m.def(
      "exact_path",
      [](const Vec& init, std::size_t k, double beta, const PromptInstance& prompt) {
        return mirror::exact_path(init, k, Temperature(beta), prompt);
      },
      py::arg("init"), py::arg("k"), py::arg("beta"), py::arg("prompt"),
      "K composed steps, equal to a single tilt at strength k/beta.");

  py::class_<mirror::CoverageReport>(m, "CoverageReport")
      .def_readonly("p_exact", &mirror::CoverageReport::p_exact)
      .def_readonly("p_lower", &mirror::CoverageReport::p_lower)
      .def_readonly("p_refresh", &mirror::CoverageReport::p_refresh)
      .def_readonly("p_one", &mirror::CoverageReport::p_one)
      .def_readonly("exp_lower", &mirror::CoverageReport::exp_lower)
      .def_readonly("gamma", &mirror::CoverageReport::gamma)
      .def_readonly("dominance", &mirror::CoverageReport::dominance)
      .def_readonly("vacuous", &mirror::CoverageReport::vacuous);

  m.def(
      "refresh_coverage",
      [](const PromptInstance& prompt, std::size_t rounds, std::size_t rollouts, double beta,
         std::variant<std::vector<std::size_t>, double> useful) {
        mirror::RefreshPlan plan;
        plan.rounds = rounds;
        plan.rollouts = rollouts;
        plan.beta = beta;
        plan.useful_set = std::move(useful);
        return mirror::refresh_coverage(plan, prompt);
      },
      py::arg("prompt"), py::arg("rounds"), py::arg("rollouts"), py::arg("beta") = 1.0,
      py::arg("useful") = std::variant<std::vector<std::size_t>, double>(
          std::vector<std::size_t>{0}),
      "At-least-once useful-draw probability, refreshed vs one-shot sampling.");

  m.def(
      "run_iterative",
      [](const PromptSet& prompts, std::size_t rounds, std::size_t rollouts, double beta,
         std::variant<std::vector<std::size_t>, double> useful, std::uint64_t seed,
         bool exact_fit) {
        mirror::RefreshPlan plan;
        plan.rounds = rounds;
        plan.rollouts = rollouts;
        plan.beta = beta;
        plan.useful_set = std::move(useful);
        auto result = mirror::run_iterative(plan, prompts, fitting::FitConfig{}, seed, exact_fit);
        py::dict out;
        out["refreshed_hit_draws"] = result.refreshed_hit_draws;
        out["oneshot_hit_draws"] = result.oneshot_hit_draws;
        out["refreshed_hit"] = result.refreshed_hit;
        out["oneshot_hit"] = result.oneshot_hit;
        out["rounds"] = result.trace.rounds.size();
        return out;
      },
      py::arg("prompts"), py::arg("rounds"), py::arg("rollouts"), py::arg("beta") = 1.0,
      py::arg("useful") = std::variant<std::vector<std::size_t>, double>(
          std::vector<std::size_t>{0}),
      py::arg("seed") = 0, py::arg("exact_fit") = true,
      "Sample, weight, and refit for several rounds; reports useful-draw counts "
      "against the budget-matched one-shot baseline.");

  m.def("bound_names", [] {
    std::vector<std::string> names;
    for (const auto& spec : bounds::catalog()) names.push_back(spec.name);
    return names;
  });

  m.def(
      "evaluate_bound",
      [](const std::string& name, const bounds::Params& params) {
        auto report = bounds::evaluate(name, params);
        py::dict out;
        out["name"] = report.name;
        out["bound"] = report.bound;
        if (report.measured) out["measured"] = *report.measured;
        if (report.satisfied) out["satisfied"] = *report.satisfied;
        out["values"] = report.values;
        return out;
      },
      py::arg("name"), py::arg("params"),
      "Evaluates a registry inequality on named scalar parameters.");

  py::class_<harness::Scenario>(m, "Scenario")
      .def_readonly("name", &harness::Scenario::name)
      .def_readonly("prompts", &harness::Scenario::prompts)
      .def_readonly("beta", &harness::Scenario::beta)
      .def_readonly("rollouts", &harness::Scenario::rollouts)
      .def_readonly("checks", &harness::Scenario::checks);

  m.def("default_scenario", &harness::default_scenario);
  m.def("load_scenario", &harness::load_scenario, py::arg("path"));
  m.def("check_names", &harness::check_names);

  py::class_<harness::CheckResult>(m, "CheckResult")
      .def_readonly("name", &harness::CheckResult::name)
      .def_readonly("bound", &harness::CheckResult::bound)
      .def_readonly("measured", &harness::CheckResult::measured)
      .def_readonly("passed", &harness::CheckResult::pass)
      .def("__repr__", [](const harness::CheckResult& r) {
        return "CheckResult('" + r.name + "', " + (r.pass ? "passed" : "FAILED") + ")";
      });

  m.def(
      "run_check",
      [](const std::string& name, std::optional<harness::Scenario> scenario, std::uint64_t seed,
         bool deep) {
        return harness::run_check(name, scenario ? *scenario : harness::default_scenario(), seed,
                                  deep);
      },
      py::arg("name"), py::arg("scenario") = std::nullopt, py::arg("seed") = 0,
      py::arg("deep") = false,
      "Runs one named property check, on the default scenario unless given one.");
}

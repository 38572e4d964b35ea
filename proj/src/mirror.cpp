#include "tiltlab/mirror.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/rng.hpp"

namespace tiltlab::mirror {

using json = nlohmann::json;

double RefreshPlan::beta_at(std::size_t round) const {
  if (beta_per_round.empty()) return beta;
  if (round >= beta_per_round.size())
    throw std::out_of_range("no per-round beta for round " + std::to_string(round));
  return beta_per_round[round];
}

std::vector<std::size_t> RefreshPlan::useful_indices(const PromptInstance& prompt) const {
  if (const auto* indices = std::get_if<std::vector<std::size_t>>(&useful_set)) {
    for (std::size_t i : *indices)
      if (i >= prompt.size())
        throw std::out_of_range("useful-set index " + std::to_string(i) +
                                " out of range for prompt '" + prompt.id + "'");
    return *indices;
  }
  return estimator::near_optimal_set(prompt, std::get<double>(useful_set));
}

Vec exact_step(const Vec& policy, const PromptInstance& prompt, Temperature beta) {
  if (policy.size() != prompt.size())
    throw std::invalid_argument("policy length does not match prompt '" + prompt.id + "'");
  double rmax = -core::kInf;
  for (std::size_t i = 0; i < policy.size(); ++i)
    if (policy[i] > 0.0) rmax = std::max(rmax, prompt.reward[i]);
  if (!std::isfinite(rmax)) throw std::invalid_argument("policy has no support");
  Vec next(policy.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < policy.size(); ++i) {
    if (policy[i] <= 0.0) continue;
    next[i] = policy[i] * std::exp((prompt.reward[i] - rmax) / beta.beta);
    z += next[i];
  }
  for (double& v : next) v /= z;
  return next;
}

Vec exact_path(const Vec& init, std::size_t k, Temperature beta, const PromptInstance& prompt) {
  if (init.size() != prompt.size())
    throw std::invalid_argument("policy length does not match prompt '" + prompt.id + "'");
  if (k == 0) return init;
  // composed tilts collapse to a single one at strength k/beta
  double rmax = -core::kInf;
  for (std::size_t i = 0; i < init.size(); ++i)
    if (init[i] > 0.0) rmax = std::max(rmax, prompt.reward[i]);
  if (!std::isfinite(rmax)) throw std::invalid_argument("policy has no support");
  Vec out(init.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < init.size(); ++i) {
    if (init[i] <= 0.0) continue;
    out[i] = init[i] * std::exp(double(k) * (prompt.reward[i] - rmax) / beta.beta);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

namespace {

double set_mass(const Vec& probs, const std::vector<std::size_t>& set) {
  double acc = 0.0;
  for (std::size_t i : set) acc += probs[i];
  return acc;
}

}  // namespace

CoverageReport refresh_coverage(const RefreshPlan& plan, const PromptInstance& prompt) {
  if (plan.rounds < 1 || plan.rollouts < 1)
    throw std::invalid_argument("plan needs at least one round and one rollout");
  auto useful = plan.useful_indices(prompt);
  std::vector<bool> in_set(prompt.size(), false);
  for (std::size_t i : useful) in_set[i] = true;

  CoverageReport out;
  double p0 = set_mass(prompt.reference, useful);
  out.vacuous = p0 <= 0.0 || p0 >= 1.0;

  // reward separation between the set and its complement
  double set_min = core::kInf, rest_max = -core::kInf;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (in_set[i]) set_min = std::min(set_min, prompt.reward[i]);
    else rest_max = std::max(rest_max, prompt.reward[i]);
  }
  out.gamma = (std::isfinite(set_min) && std::isfinite(rest_max)) ? set_min - rest_max : 0.0;

  Vec current = prompt.reference;
  double log_miss_refresh = 0.0;
  double tilt = 0.0;  // accumulated 1/beta along the path
  for (std::size_t k = 0; k < plan.rounds; ++k) {
    double pk = set_mass(current, useful);
    out.p_exact.push_back(pk);
    log_miss_refresh += double(plan.rollouts) * std::log1p(-std::min(pk, 1.0));

    double lower;
    if (out.vacuous) {
      lower = p0;
    } else if (plan.beta_per_round.empty()) {
      lower = bounds::formulas::refresh_p_lower(p0, double(k), out.gamma, plan.beta);
    } else {
      lower = 1.0 / (1.0 + (1.0 - p0) / p0 * std::exp(-out.gamma * tilt));
    }
    out.p_lower.push_back(lower);

    tilt += 1.0 / plan.beta_at(k);
    current = exact_step(current, prompt, Temperature(plan.beta_at(k)));
  }

  out.p_refresh = -std::expm1(log_miss_refresh);
  out.p_one = bounds::formulas::one_shot_hit(p0, double(plan.rounds), double(plan.rollouts));
  out.exp_lower = bounds::formulas::refresh_exponential(out.p_lower, double(plan.rollouts));
  out.dominance = out.p_refresh >= out.p_one - 1e-12;
  return out;
}

double approx_refresh_hit(const std::vector<double>& p_lower,
                          const std::vector<double>& tv_drift, std::size_t n) {
  if (p_lower.size() != tv_drift.size())
    throw std::invalid_argument("one drift per round required");
  for (double d : tv_drift)
    if (d < 0.0) throw std::domain_error("drifts must be nonnegative");
  return bounds::formulas::approx_refresh(p_lower, tv_drift, double(n));
}

LatticeReport effective_temperature(double beta, double beta_eff, const PromptInstance& prompt) {
  if (beta <= 0.0 || beta_eff <= 0.0)
    throw std::domain_error("temperatures must be positive");
  LatticeReport out;
  double rounds = bounds::formulas::lattice_rounds(beta, beta_eff);
  out.k = std::size_t(rounds);
  out.lattice_error = std::abs(rounds / beta - 1.0 / beta_eff);
  out.lattice_bound = bounds::formulas::lattice_error_bound(beta);
  double span = prompt.reward_range();
  out.sup_log_bound = bounds::formulas::lattice_sup_log(span, beta);
  out.tv_bound = bounds::formulas::lattice_tv(span, beta);

  Vec reached = exact_path(prompt.reference, out.k, Temperature(beta), prompt);
  Vec ideal = boltzmann::build_target(prompt, Temperature(beta_eff)).target;
  for (std::size_t i = 0; i < reached.size(); ++i) {
    if (prompt.reference[i] <= 0.0) continue;
    out.measured_sup_log =
        std::max(out.measured_sup_log, std::abs(std::log(reached[i]) - std::log(ideal[i])));
  }
  out.measured_tv = core::total_variation(reached, ideal);
  out.within = out.measured_sup_log <= out.sup_log_bound + 1e-12 &&
               out.measured_tv <= out.tv_bound + 1e-12;
  return out;
}

double ess_temperature_cost(double beta, double p, double beta_eff) {
  if (beta_eff <= 0.0 || beta < beta_eff)
    throw std::domain_error("needs beta >= beta_eff > 0");
  if (p <= 0.0 || p >= 1.0)
    throw std::domain_error("success mass must lie strictly between 0 and 1");
  return bounds::formulas::ess_temperature_cost(beta, p, beta_eff);
}

namespace {

double mean_kl(const TabularPolicy& from, const TabularPolicy& to, const PromptSet& prompts) {
  double acc = 0.0;
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const auto& id = prompts.prompts[i].id;
    double kl = core::kl_divergence(from.at(id), to.at(id));
    if (std::isinf(kl)) return core::kInf;
    acc += prompts.prompt_weights[i] * kl;
  }
  return acc;
}

double mean_reward(const TabularPolicy& policy, const PromptSet& prompts) {
  double acc = 0.0;
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const auto& p = prompts.prompts[i];
    const Vec& probs = policy.at(p.id);
    double r = 0.0;
    for (std::size_t y = 0; y < probs.size(); ++y) r += probs[y] * p.reward[y];
    acc += prompts.prompt_weights[i] * r;
  }
  return acc;
}

}  // namespace

RegretReport inexact_regret(const PmdTrace& trace, const PromptSet& prompts, Temperature beta,
                            const TabularPolicy& comparator) {
  if (trace.rounds.empty()) throw std::invalid_argument("trace has no rounds");

  double span = 0.0;
  for (const auto& p : prompts.prompts) span = std::max(span, p.reward_range());

  RegretReport out;
  double comp_reward = mean_reward(comparator, prompts);
  for (const auto& rec : trace.rounds)
    out.lhs += comp_reward - mean_reward(rec.reference, prompts);

  double kl0 = mean_kl(comparator, trace.rounds.front().reference, prompts);
  if (std::isinf(kl0))
    throw std::invalid_argument("comparator places mass outside the initial policy support");

  double drift_sum = 0.0;
  for (const auto& rec : trace.rounds) {
    double to_fitted = mean_kl(comparator, rec.fitted, prompts);
    double to_exact = mean_kl(comparator, rec.exact_target, prompts);
    if (std::isinf(to_fitted) || std::isinf(to_exact))
      throw std::invalid_argument("comparator places mass outside a round policy support");
    double raw = to_fitted - to_exact;
    out.drifts_raw.push_back(raw);
    drift_sum += std::max(raw, 0.0);
  }

  out.kl_term = beta.beta * kl0;
  out.step_term = double(trace.rounds.size()) * span * span / (8.0 * beta.beta);
  out.drift_term = beta.beta * drift_sum;
  out.rhs = bounds::formulas::pmd_regret_rhs(beta.beta, kl0, double(trace.rounds.size()),
                                             span, drift_sum);
  out.holds = out.lhs <= out.rhs + 1e-12;
  return out;
}

double inner_drift_bound(double xi, double mu, double lambda, double zeta) {
  if (xi < 0.0 || zeta < 0.0 || lambda < 0.0)
    throw std::domain_error("certificate terms must be nonnegative");
  if (mu <= 0.0) throw std::domain_error("curvature constant must be positive");
  return bounds::formulas::inner_drift(xi, mu, lambda, zeta);
}

double forward_kl_drift_bound(double c_k, double rho_k, double f_k) {
  if (c_k <= 0.0) throw std::domain_error("density ratio bound must be positive");
  if (f_k < 0.0) throw std::domain_error("forward divergence must be nonnegative");
  if (rho_k < 0.0) throw std::domain_error("band radius must be nonnegative");
  if (rho_k >= 1.0) return core::kInf;
  return bounds::formulas::forward_kl_drift(c_k, rho_k, f_k);
}

IterativeResult run_iterative(const RefreshPlan& plan, const PromptSet& prompts,
                              const fitting::FitConfig& fit_config, std::uint64_t seed,
                              bool exact_fit) {
  if (plan.rounds < 1 || plan.rollouts < 1)
    throw std::invalid_argument("plan needs at least one round and one rollout");

  IterativeResult out;
  TabularPolicy current;
  for (const auto& p : prompts.prompts) current.set(p.id, p.reference);

  for (std::size_t k = 0; k < plan.rounds; ++k) {
    double beta_k = plan.beta_at(k);
    RoundRecord rec;
    rec.round = k;
    rec.reference = current;

    estimator::WeightedDataset data;
    data.beta = beta_k;
    for (const auto& p : prompts.prompts) {
      auto batch = estimator::sample_rollouts_from(p, current.at(p.id), plan.rollouts,
                                                   seed, k);
      auto useful = plan.useful_indices(p);
      std::vector<bool> in_set(p.size(), false);
      for (std::size_t i : useful) in_set[i] = true;
      for (std::size_t s : batch.samples)
        if (in_set[s]) ++rec.hit_draws;
      data.fragments.push_back(estimator::empirical_weights(batch, Temperature(beta_k)));
      rec.batches.push_back(std::move(batch));
    }
    rec.hit = rec.hit_draws > 0;

    for (const auto& p : prompts.prompts)
      rec.exact_target.set(p.id, exact_step(current.at(p.id), p, Temperature(beta_k)));

    if (exact_fit) {
      rec.fitted = rec.exact_target;
      rec.inner_excess = 0.0;
    } else {
      rec.fitted = fitting::fit(data, prompts, fit_config).policy.to_tabular();
      rec.inner_excess =
          fitting::weighted_nll(rec.fitted, data) - fitting::weighted_nll(rec.exact_target, data);
    }

    if (plan.comparator) {
      double to_fitted = mean_kl(*plan.comparator, rec.fitted, prompts);
      double to_exact = mean_kl(*plan.comparator, rec.exact_target, prompts);
      if (std::isinf(to_fitted) && std::isinf(to_exact))
        rec.drift_raw = 0.0;
      else
        rec.drift_raw = to_fitted - to_exact;
    }

    out.refreshed_hit_draws += rec.hit_draws;
    current = rec.fitted;
    out.trace.rounds.push_back(std::move(rec));
  }
  out.refreshed_hit = out.refreshed_hit_draws > 0;

  // budget-matched comparison: the whole draw budget spent on the initial policy
  for (const auto& p : prompts.prompts) {
    auto batch = estimator::sample_rollouts_from(p, p.reference,
                                                 plan.rounds * plan.rollouts, seed,
                                                 plan.rounds);
    auto useful = plan.useful_indices(p);
    std::vector<bool> in_set(p.size(), false);
    for (std::size_t i : useful) in_set[i] = true;
    for (std::size_t s : batch.samples)
      if (in_set[s]) ++out.oneshot_hit_draws;
  }
  out.oneshot_hit = out.oneshot_hit_draws > 0;
  return out;
}

void PmdTrace::write_records(std::ostream& out) const {
  for (const auto& rec : rounds) {
    json line;
    line["round"] = rec.round;
    for (const auto& [id, probs] : rec.reference.table) line["reference"][id] = probs;
    for (const auto& [id, probs] : rec.exact_target.table) line["exact_target"][id] = probs;
    for (const auto& [id, probs] : rec.fitted.table) line["fitted"][id] = probs;
    std::size_t draws = 0;
    for (const auto& b : rec.batches) draws += b.samples.size();
    line["draws"] = draws;
    line["hit_draws"] = rec.hit_draws;
    line["hit"] = rec.hit;
    line["drift_raw"] = rec.drift_raw;
    line["inner_excess"] = rec.inner_excess;
    out << line.dump() << '\n';
  }
}

}  // namespace tiltlab::mirror

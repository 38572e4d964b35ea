#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tiltlab/bounds.hpp"
#include "tiltlab/core.hpp"
#include "tiltlab/estimator.hpp"
#include "tiltlab/fitting.hpp"

// Iterated tilting as KL policy mirror descent: the exact path, refresh
// coverage laws, the effective-temperature lattice, and drift/regret
// accounting for inexact rounds.
namespace tiltlab::mirror {

using core::PromptInstance;
using core::PromptSet;
using core::TabularPolicy;
using core::Temperature;
using core::Vec;

struct RoundRecord {
  std::size_t round = 0;
  TabularPolicy reference;     // sampling policy entering the round
  TabularPolicy exact_target;  // closed-form mirror step from it
  TabularPolicy fitted;        // policy actually produced
  std::vector<estimator::RolloutBatch> batches;
  std::size_t hit_draws = 0;   // draws landing in the useful set this round
  bool hit = false;
  double drift_raw = 0.0;      // comparator-KL difference, can be negative
  double inner_excess = 0.0;   // fitted loss over the exact target's loss
};

struct PmdTrace {
  std::vector<RoundRecord> rounds;

  void write_records(std::ostream& out) const;
};

struct RefreshPlan {
  std::size_t rounds = 1;    // K
  std::size_t rollouts = 1;  // N per round
  double beta = 1.0;
  std::vector<double> beta_per_round;  // optional per-round override
  // useful set: explicit indices, or a reward threshold gamma from the top
  std::variant<std::vector<std::size_t>, double> useful_set =
      std::vector<std::size_t>{};
  std::optional<TabularPolicy> comparator;

  double beta_at(std::size_t round) const;
  std::vector<std::size_t> useful_indices(const PromptInstance& prompt) const;
};

// One closed-form mirror step: next proportional to policy * exp(r/beta).
Vec exact_step(const Vec& policy, const PromptInstance& prompt, Temperature beta);

// K steps composed, equal to a single tilt at strength K/beta.
Vec exact_path(const Vec& init, std::size_t k, Temperature beta, const PromptInstance& prompt);

struct CoverageReport {
  std::vector<double> p_exact;  // useful-set mass along the exact path
  std::vector<double> p_lower;  // closed-form lower bounds
  double p_refresh = 0.0;       // at-least-once probability with refreshed sampling
  double p_one = 0.0;           // same budget, all draws from round zero
  double exp_lower = 0.0;       // 1 - exp(-N sum p_lower)
  double gamma = 0.0;           // reward separation used by the lower bounds
  bool dominance = false;
  bool vacuous = false;         // p0 degenerate, refresh cannot create support
};

CoverageReport refresh_coverage(const RefreshPlan& plan, const PromptInstance& prompt);

// Hit-rate lower bound surviving per-round sampling drift.
double approx_refresh_hit(const std::vector<double>& p_lower,
                          const std::vector<double>& tv_drift, std::size_t n);

struct LatticeReport {
  std::size_t k = 0;            // rounds chosen for the target strength
  double lattice_error = 0.0;   // |K/beta - 1/beta_eff|
  double lattice_bound = 0.0;   // 1/(2 beta)
  double sup_log_bound = 0.0;   // reward span / (2 beta)
  double tv_bound = 0.0;        // tanh(reward span / (4 beta))
  double measured_sup_log = 0.0;
  double measured_tv = 0.0;
  bool within = false;
};

// Reachable tilt strengths are the lattice {K/beta}; measures the price of
// rounding 1/beta_eff to it on the given instance.
LatticeReport effective_temperature(double beta, double beta_eff, const PromptInstance& prompt);

// Rounds times per-round weight second moment for a binary-verifier prompt.
double ess_temperature_cost(double beta, double p, double beta_eff);

struct RegretReport {
  double lhs = 0.0;         // summed comparator reward advantage
  double kl_term = 0.0;     // beta * KL(comparator || round-0 policy)
  double step_term = 0.0;   // K * span^2 / (8 beta)
  double drift_term = 0.0;  // beta * sum positive-part drifts
  double rhs = 0.0;
  std::vector<double> drifts_raw;
  bool holds = false;
};

RegretReport inexact_regret(const PmdTrace& trace, const PromptSet& prompts, Temperature beta,
                            const TabularPolicy& comparator);

// Drift certificate from inner optimization excess: Lambda sqrt(2 xi / mu) + zeta.
double inner_drift_bound(double xi, double mu, double lambda, double zeta);
// Drift certificate from the forward KL of the fitted round policy.
double forward_kl_drift_bound(double c_k, double rho_k, double f_k);

struct IterativeResult {
  PmdTrace trace;
  std::size_t refreshed_hit_draws = 0;
  bool refreshed_hit = false;
  std::size_t oneshot_hit_draws = 0;  // budget-matched, all draws from round 0
  bool oneshot_hit = false;
};

// K rounds of sample / weight / fit, each using the previous fitted policy as
// sampler and anchor, plus the budget-matched one-shot comparison.
IterativeResult run_iterative(const RefreshPlan& plan, const PromptSet& prompts,
                              const fitting::FitConfig& fit_config, std::uint64_t seed,
                              bool exact_fit = true);

}  // namespace tiltlab::mirror

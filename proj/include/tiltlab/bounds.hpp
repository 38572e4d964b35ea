#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tiltlab/core.hpp"

namespace tiltlab {

// Uniform shape for every evaluated inequality: headline bound, optional
// measured counterpart, and any named auxiliary values the formula produces.
struct BoundReport {
  std::string name;
  std::map<std::string, double> inputs;
  double bound = 0.0;
  std::optional<double> measured;
  std::optional<bool> satisfied;
  std::map<std::string, double> values;
};

}  // namespace tiltlab

// Catalog of the closed-form inequalities used across the library, each a
// named evaluator over scalar parameters. Modules call the same formula
// functions the registry dispatches to, so there is a single definition of
// every right-hand side.
namespace tiltlab::bounds {

using Params = std::map<std::string, double>;

struct BoundSpec {
  std::string name;
  std::string anchor;   // human-readable catalog label
  std::string formula;  // display form of the right-hand side
  std::vector<std::string> params;
};

const std::vector<BoundSpec>& catalog();
BoundReport evaluate(const std::string& name, const Params& params);
bool has_entry(const std::string& name);

// Scalar formula layer. These are the definitions the registry evaluates and
// the other modules reuse directly.
namespace formulas {

// support restriction
double support_gap(double beta, double target_mass);
double missed_set_gap(double beta, double missed_mass);

// coverage of a rare useful set by N reference draws
double coverage_miss(double p, double n);
double coverage_required_n(double p, double delta);
double coverage_multiprompt_n(double p_min, double m, double delta);
double rare_support_lower(double p, double n, double beta, double target_success);
double passk(double hit_mass, double k);

// binary-verifier weight second moment
double binary_target_success(double p, double beta);
double binary_c2(double p, double beta);
double binary_frontier(double eta, double p);

// estimation error of weighted means and normalizers
double bernstein_deviation(double l, double c2, double w_max, double n, double delta);
double snis_perturbation(double base_deviation, double l, double eps);
double hoeffding_partition_tail(double n, double t, double r_beta);
double reward_spread(double r_min, double r_max, double beta);  // R_beta
double uniform_normalizer(double w_max, double l_log, double r_beta, double r_min,
                          double beta, double m, double n, double delta);
double pl_normalizer(double g, double mu, double m, const std::vector<double>& ratios);

// optimizer certificates
double sgd_stationarity(double initial_gap, double smoothness, double eta, double sigma2,
                        double batch, double steps);
double pl_excess(double initial_excess, double smoothness, double mu, double eta,
                 double sigma2, double batch, double steps);

// local multiplicative-band transfer
double transfer_a(double rho);
double transfer_b(double rho);
double transfer_kappa(double rho);
double transfer_gamma(double rho);

// verifier perturbation stability
double verifier_sup_log(double eps, double beta);
double verifier_tv(double eps, double beta);
double verifier_value(double eps);

// iterated tilting
double refresh_p_lower(double p0, double k, double gamma, double beta);
double one_shot_hit(double p0, double k, double n);
double refresh_exponential(const std::vector<double>& p_lower, double n);
double approx_refresh(const std::vector<double>& p_lower, const std::vector<double>& drifts,
                      double n);
double topset_concentration(double p_star, double k, double gamma, double beta);
double reward_suboptimality(double p_star, double k, double gamma, double beta,
                            double reward_span);
double lattice_rounds(double beta, double beta_eff);
double lattice_error_bound(double beta);
double lattice_sup_log(double reward_span, double beta);
double lattice_tv(double reward_span, double beta);
double ess_temperature_cost(double beta, double p, double beta_eff);

// inexact mirror-descent accounting
double pmd_regret_rhs(double beta, double comparator_kl, double k, double reward_span,
                      double drift_sum);
double inner_drift(double xi, double mu, double lambda, double zeta);
double forward_kl_route(double kappa_k, double inf_f, double delta_gen,
                        double delta_norm, double eps_opt);
double forward_kl_drift(double c_k, double rho_k, double f_k);

// assembled end-to-end certificate
double e2e_assembled(double beta, double kappa, double approximation, double delta_gen,
                     double delta_norm, double eps_opt);

}  // namespace formulas
}  // namespace tiltlab::bounds

#include "tiltlab/bounds.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace tiltlab::bounds {

namespace formulas {

double support_gap(double beta, double target_mass) {
  if (target_mass <= 0.0) return core::kInf;
  return beta * std::log(1.0 / target_mass);
}

double missed_set_gap(double beta, double missed_mass) {
  if (missed_mass >= 1.0) return core::kInf;
  return beta * std::log(1.0 / (1.0 - missed_mass));
}

double coverage_miss(double p, double n) { return std::pow(1.0 - p, n); }

double coverage_required_n(double p, double delta) {
  return std::log(1.0 / delta) / (-std::log1p(-p));
}

double coverage_multiprompt_n(double p_min, double m, double delta) {
  return std::log(m / delta) / p_min;
}

double rare_support_lower(double p, double n, double beta, double target_success) {
  return std::pow(1.0 - p, n) * beta * std::log(1.0 / (1.0 - target_success));
}

double passk(double hit_mass, double k) { return 1.0 - std::pow(1.0 - hit_mass, k); }

double binary_target_success(double p, double beta) {
  double a = std::exp(1.0 / beta);
  return p * a / (1.0 + p * (a - 1.0));
}

double binary_c2(double p, double beta) {
  double a = std::exp(1.0 / beta);
  double z = 1.0 + p * (a - 1.0);
  return ((1.0 - p) + p * a * a) / (z * z);
}

double binary_frontier(double eta, double p) { return (1.0 - eta) * (1.0 - eta) / p; }

double bernstein_deviation(double l, double c2, double w_max, double n, double delta) {
  double tail = std::log(2.0 / delta);
  return l * std::sqrt(2.0 * c2 * tail / n) + 2.0 * l * w_max * tail / (3.0 * n);
}

double snis_perturbation(double base_deviation, double l, double eps) {
  return (base_deviation + l * eps) / (1.0 - eps);
}

double hoeffding_partition_tail(double n, double t, double r_beta) {
  return 2.0 * std::exp(-2.0 * n * t * t / (r_beta * r_beta));
}

double reward_spread(double r_min, double r_max, double beta) {
  return std::exp(r_max / beta) - std::exp(r_min / beta);
}

double uniform_normalizer(double w_max, double l_log, double r_beta, double r_min,
                          double beta, double m, double n, double delta) {
  return w_max * l_log * r_beta * std::exp(-r_min / beta) / std::sqrt(2.0 * n) *
         std::sqrt(std::log(2.0 * m / delta));
}

double pl_normalizer(double g, double mu, double m, const std::vector<double>& ratios) {
  double acc = 0.0;
  for (double s : ratios) acc += (s - 1.0) * (s - 1.0);
  return g * g / (2.0 * mu * m) * acc;
}

double sgd_stationarity(double initial_gap, double smoothness, double eta, double sigma2,
                        double batch, double steps) {
  return 2.0 * initial_gap / (eta * steps) + smoothness * eta * sigma2 / batch;
}

double pl_excess(double initial_excess, double smoothness, double mu, double eta,
                 double sigma2, double batch, double steps) {
  return std::pow(1.0 - eta * mu, steps) * initial_excess +
         smoothness * eta * sigma2 / (2.0 * mu * batch);
}

double transfer_a(double rho) {
  double om = 1.0 - rho;
  return rho / (3.0 * om * om);
}

double transfer_b(double rho) {
  double om = 1.0 - rho;
  return 2.0 * rho / (3.0 * om * om * om);
}

double transfer_kappa(double rho) {
  double a = transfer_a(rho);
  if (a >= 1.0) return core::kInf;
  return (1.0 + transfer_b(rho)) / (1.0 - a);
}

double transfer_gamma(double rho) {
  double a = transfer_a(rho), b = transfer_b(rho);
  if (a >= 1.0 || b >= 1.0) return core::kInf;
  return (1.0 + b) * (1.0 + a) / ((1.0 - a) * (1.0 - b));
}

double verifier_sup_log(double eps, double beta) { return 2.0 * eps / beta; }
double verifier_tv(double eps, double beta) { return std::tanh(eps / beta); }
double verifier_value(double eps) { return 2.0 * eps; }

double refresh_p_lower(double p0, double k, double gamma, double beta) {
  return 1.0 / (1.0 + (1.0 - p0) / p0 * std::exp(-k * gamma / beta));
}

double one_shot_hit(double p0, double k, double n) {
  return 1.0 - std::pow(1.0 - p0, k * n);
}

double refresh_exponential(const std::vector<double>& p_lower, double n) {
  double acc = 0.0;
  for (double p : p_lower) acc += p;
  return 1.0 - std::exp(-n * acc);
}

double approx_refresh(const std::vector<double>& p_lower, const std::vector<double>& drifts,
                      double n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < p_lower.size(); ++k) {
    double margin = p_lower[k] - (k < drifts.size() ? drifts[k] : 0.0);
    if (margin > 0.0) acc += margin;
  }
  return 1.0 - std::exp(-n * acc);
}

double topset_concentration(double p_star, double k, double gamma, double beta) {
  return (1.0 - p_star) / p_star * std::exp(-k * gamma / beta);
}

double reward_suboptimality(double p_star, double k, double gamma, double beta,
                            double reward_span) {
  return reward_span * topset_concentration(p_star, k, gamma, beta);
}

double lattice_rounds(double beta, double beta_eff) {
  return std::round(beta / beta_eff);
}

double lattice_error_bound(double beta) { return 1.0 / (2.0 * beta); }

double lattice_sup_log(double reward_span, double beta) {
  return reward_span / (2.0 * beta);
}

double lattice_tv(double reward_span, double beta) {
  return std::tanh(reward_span / (4.0 * beta));
}

double ess_temperature_cost(double beta, double p, double beta_eff) {
  double k = std::ceil(beta / beta_eff);
  double z = 1.0 + p * (std::exp(1.0 / beta) - 1.0);
  return k * ((1.0 - p) + p * std::exp(2.0 / beta)) / (z * z);
}

double pmd_regret_rhs(double beta, double comparator_kl, double k, double reward_span,
                      double drift_sum) {
  return beta * comparator_kl + k * reward_span * reward_span / (8.0 * beta) +
         beta * drift_sum;
}

double inner_drift(double xi, double mu, double lambda, double zeta) {
  return lambda * std::sqrt(2.0 * xi / mu) + zeta;
}

double forward_kl_route(double kappa_k, double inf_f, double delta_gen,
                        double delta_norm, double eps_opt) {
  return kappa_k * (inf_f + 2.0 * delta_gen + 2.0 * delta_norm + eps_opt);
}

double forward_kl_drift(double c_k, double rho_k, double f_k) {
  double a = transfer_a(rho_k);
  if (a >= 1.0) return core::kInf;
  return c_k * (1.0 + rho_k) / (1.0 - rho_k) * std::sqrt(2.0 * f_k / (1.0 - a));
}

double e2e_assembled(double beta, double kappa, double approximation, double delta_gen,
                     double delta_norm, double eps_opt) {
  return beta * kappa *
         (approximation + 2.0 * delta_gen + 2.0 * delta_norm + eps_opt);
}

}  // namespace formulas

namespace {

using formulas::transfer_a;

struct Domain {
  std::function<bool(double)> ok;
  std::string description;
};

Domain positive() {
  return {[](double x) { return x > 0.0 && std::isfinite(x); }, "positive"};
}
Domain nonnegative() {
  return {[](double x) { return x >= 0.0 && std::isfinite(x); }, "nonnegative"};
}
Domain open01() {
  return {[](double x) { return x > 0.0 && x < 1.0; }, "in (0,1)"};
}
Domain closed01() {
  return {[](double x) { return x >= 0.0 && x <= 1.0; }, "in [0,1]"};
}
Domain count() {
  return {[](double x) { return x >= 1.0 && std::isfinite(x); }, "at least one"};
}
Domain any_real() {
  return {[](double x) { return std::isfinite(x); }, "finite"};
}
Domain band() {
  return {[](double x) { return x >= 0.0 && x < 1.0; }, "in [0,1)"};
}

struct Entry {
  BoundSpec spec;
  std::vector<Domain> domains;
  std::function<double(const Params&)> eval;
  std::function<std::map<std::string, double>(const Params&)> extras;
  bool asserts = true;  // false for term evaluators with an unspecified constant
};

double get(const Params& p, const std::string& key) { return p.at(key); }

std::vector<Entry> build_registry() {
  std::vector<Entry> reg;
  auto add = [&reg](std::string name, std::string anchor, std::string formula,
                    std::vector<std::pair<std::string, Domain>> params,
                    std::function<double(const Params&)> eval,
                    std::function<std::map<std::string, double>(const Params&)> extras = {},
                    bool asserts = true) {
    Entry e;
    e.spec.name = std::move(name);
    e.spec.anchor = std::move(anchor);
    e.spec.formula = std::move(formula);
    for (auto& [key, dom] : params) {
      e.spec.params.push_back(key);
      e.domains.push_back(dom);
    }
    e.eval = std::move(eval);
    e.extras = std::move(extras);
    e.asserts = asserts;
    reg.push_back(std::move(e));
  };

  add("support_gap", "value price of restricting the policy to a support set",
      "beta * log(1 / target_mass)",
      {{"beta", positive()}, {"target_mass", closed01()}},
      [](const Params& p) {
        return formulas::support_gap(get(p, "beta"), get(p, "target_mass"));
      });

  add("missed_set_gap", "value price floor when a useful set is absent from the support",
      "beta * log(1 / (1 - missed_mass))",
      {{"beta", positive()}, {"missed_mass", closed01()}},
      [](const Params& p) {
        return formulas::missed_set_gap(get(p, "beta"), get(p, "missed_mass"));
      });

  add("coverage_miss", "probability that n reference draws all miss the useful set",
      "(1 - p)^n", {{"p", open01()}, {"n", count()}},
      [](const Params& p) { return formulas::coverage_miss(get(p, "p"), get(p, "n")); });

  add("coverage_required_n", "draws needed to hit the useful set with confidence",
      "log(1/delta) / -log(1-p)", {{"p", open01()}, {"delta", open01()}},
      [](const Params& p) {
        return formulas::coverage_required_n(get(p, "p"), get(p, "delta"));
      });

  add("coverage_multiprompt_n",
      "per-prompt draws sufficient to hit every prompt's useful set jointly",
      "log(m/delta) / p_min",
      {{"p_min", open01()}, {"m", count()}, {"delta", open01()}},
      [](const Params& p) {
        return formulas::coverage_multiprompt_n(get(p, "p_min"), get(p, "m"),
                                                get(p, "delta"));
      });

  add("rare_support_lower",
      "expected floor on the support price for a rarely passing binary prompt",
      "(1-p)^n * beta * log(1/(1-target_success))",
      {{"p", open01()}, {"n", count()}, {"beta", positive()},
       {"target_success", open01()}},
      [](const Params& p) {
        return formulas::rare_support_lower(get(p, "p"), get(p, "n"), get(p, "beta"),
                                            get(p, "target_success"));
      });

  add("passk", "chance that k independent draws contain a success",
      "1 - (1 - hit_mass)^k", {{"hit_mass", closed01()}, {"k", count()}},
      [](const Params& p) { return formulas::passk(get(p, "hit_mass"), get(p, "k")); });

  add("binary_target_success", "tilted success probability of a binary verifier",
      "p*a / (1 + p*(a-1)), a = exp(1/beta)",
      {{"p", open01()}, {"beta", positive()}},
      [](const Params& p) {
        return formulas::binary_target_success(get(p, "p"), get(p, "beta"));
      });

  add("binary_c2", "weight second moment of a binary verifier",
      "((1-p) + p*a^2) / (1 + p*(a-1))^2, a = exp(1/beta)",
      {{"p", open01()}, {"beta", positive()}},
      [](const Params& p) { return formulas::binary_c2(get(p, "p"), get(p, "beta")); });

  add("binary_frontier",
      "weight second moment forced by demanding high tilted success",
      "(1 - eta)^2 / p", {{"eta", closed01()}, {"p", open01()}},
      [](const Params& p) {
        return formulas::binary_frontier(get(p, "eta"), get(p, "p"));
      });

  add("bernstein_deviation",
      "high-probability deviation of an importance-weighted mean",
      "l*sqrt(2*c2*log(2/delta)/n) + 2*l*w_max*log(2/delta)/(3*n)",
      {{"l", positive()}, {"c2", positive()}, {"w_max", positive()}, {"n", count()},
       {"delta", open01()}},
      [](const Params& p) {
        return formulas::bernstein_deviation(get(p, "l"), get(p, "c2"), get(p, "w_max"),
                                             get(p, "n"), get(p, "delta"));
      });

  add("snis_perturbation",
      "self-normalized mean deviation given the unnormalized one",
      "(base_deviation + l*eps) / (1 - eps)",
      {{"base_deviation", nonnegative()}, {"l", positive()}, {"eps", band()}},
      [](const Params& p) {
        return formulas::snis_perturbation(get(p, "base_deviation"), get(p, "l"),
                                           get(p, "eps"));
      });

  add("hoeffding_partition", "tail of the empirical normalizer around its mean",
      "2*exp(-2*n*t^2 / r_beta^2)",
      {{"n", count()}, {"t", positive()}, {"r_beta", positive()}},
      [](const Params& p) {
        return formulas::hoeffding_partition_tail(get(p, "n"), get(p, "t"),
                                                  get(p, "r_beta"));
      });

  add("reward_spread", "range of the exponentiated reward",
      "exp(r_max/beta) - exp(r_min/beta)",
      {{"r_min", any_real()}, {"r_max", any_real()}, {"beta", positive()}},
      [](const Params& p) {
        if (get(p, "r_max") < get(p, "r_min"))
          throw std::domain_error("parameter 'r_max' must be at least 'r_min'");
        return formulas::reward_spread(get(p, "r_min"), get(p, "r_max"), get(p, "beta"));
      });

  add("uniform_normalizer",
      "loss perturbation from replacing exact normalizers with estimates, all prompts",
      "w_max*l_log*r_beta*exp(-r_min/beta)/sqrt(2n) * sqrt(log(2m/delta))",
      {{"w_max", positive()}, {"l_log", positive()}, {"r_beta", positive()},
       {"r_min", any_real()}, {"beta", positive()}, {"m", count()}, {"n", count()},
       {"delta", open01()}},
      [](const Params& p) {
        return formulas::uniform_normalizer(get(p, "w_max"), get(p, "l_log"),
                                            get(p, "r_beta"), get(p, "r_min"),
                                            get(p, "beta"), get(p, "m"), get(p, "n"),
                                            get(p, "delta"));
      });

  add("pl_normalizer",
      "excess loss at a stationary point of the estimated-normalizer objective",
      "g^2/(2*mu*m) * sum_sq_dev",
      {{"g", positive()}, {"mu", positive()}, {"m", count()},
       {"sum_sq_dev", nonnegative()}},
      [](const Params& p) {
        return get(p, "g") * get(p, "g") / (2.0 * get(p, "mu") * get(p, "m")) *
               get(p, "sum_sq_dev");
      });

  add("pl_normalizer_expected",
      "expected excess loss of the estimated-normalizer stationary point",
      "g^2 * r_beta^2 * exp(-2*r_min/beta) / (8*mu*n)",
      {{"g", positive()}, {"r_beta", positive()}, {"r_min", any_real()},
       {"beta", positive()}, {"mu", positive()}, {"n", count()}},
      [](const Params& p) {
        double rb = get(p, "r_beta");
        return get(p, "g") * get(p, "g") * rb * rb *
               std::exp(-2.0 * get(p, "r_min") / get(p, "beta")) /
               (8.0 * get(p, "mu") * get(p, "n"));
      });

  add("sgd_stationarity", "mean squared gradient norm reached by minibatch descent",
      "2*initial_gap/(eta*steps) + smoothness*eta*sigma2/batch",
      {{"initial_gap", nonnegative()}, {"smoothness", positive()}, {"eta", positive()},
       {"sigma2", nonnegative()}, {"batch", count()}, {"steps", count()}},
      [](const Params& p) {
        if (get(p, "eta") > 1.0 / get(p, "smoothness"))
          throw std::domain_error("parameter 'eta' must be at most 1/smoothness");
        return formulas::sgd_stationarity(get(p, "initial_gap"), get(p, "smoothness"),
                                          get(p, "eta"), get(p, "sigma2"),
                                          get(p, "batch"), get(p, "steps"));
      });

  add("pl_excess", "excess loss under curvature after t minibatch steps",
      "(1-eta*mu)^steps*initial_excess + smoothness*eta*sigma2/(2*mu*batch)",
      {{"initial_excess", nonnegative()}, {"smoothness", positive()},
       {"mu", positive()}, {"eta", positive()}, {"sigma2", nonnegative()},
       {"batch", count()}, {"steps", count()}},
      [](const Params& p) {
        if (get(p, "eta") > 1.0 / get(p, "smoothness"))
          throw std::domain_error("parameter 'eta' must be at most 1/smoothness");
        return formulas::pl_excess(get(p, "initial_excess"), get(p, "smoothness"),
                                   get(p, "mu"), get(p, "eta"), get(p, "sigma2"),
                                   get(p, "batch"), get(p, "steps"));
      });

  add("local_kappa", "reverse-through-forward divergence multiplier inside the band",
      "(1+b)/(1-a), a = rho/(3(1-rho)^2), b = 2rho/(3(1-rho)^3)",
      {{"rho", band()}},
      [](const Params& p) { return formulas::transfer_kappa(get(p, "rho")); },
      [](const Params& p) {
        return std::map<std::string, double>{{"a_rho", formulas::transfer_a(get(p, "rho"))},
                                             {"b_rho", formulas::transfer_b(get(p, "rho"))}};
      });

  add("local_gamma", "projection-swap multiplier inside the band",
      "(1+b)(1+a)/((1-a)(1-b))", {{"rho", band()}},
      [](const Params& p) { return formulas::transfer_gamma(get(p, "rho")); });

  add("verifier_sup_log", "log-density shift of the target per unit reward error",
      "2*eps/beta", {{"eps", nonnegative()}, {"beta", positive()}},
      [](const Params& p) {
        return formulas::verifier_sup_log(get(p, "eps"), get(p, "beta"));
      });

  add("verifier_tv", "total-variation shift of the target under reward error",
      "tanh(eps/beta)", {{"eps", nonnegative()}, {"beta", positive()}},
      [](const Params& p) { return formulas::verifier_tv(get(p, "eps"), get(p, "beta")); });

  add("verifier_value", "value shift of the target under reward error", "2*eps",
      {{"eps", nonnegative()}},
      [](const Params& p) { return formulas::verifier_value(get(p, "eps")); });

  add("refresh_p_lower", "useful-set mass floor after k exact refresh rounds",
      "1 / (1 + ((1-p0)/p0)*exp(-k*gamma/beta))",
      {{"p0", open01()}, {"k", nonnegative()}, {"gamma", positive()},
       {"beta", positive()}},
      [](const Params& p) {
        return formulas::refresh_p_lower(get(p, "p0"), get(p, "k"), get(p, "gamma"),
                                         get(p, "beta"));
      });

  add("one_shot_hit", "hit probability when the whole budget samples round zero",
      "1 - (1 - p0)^(k*n)",
      {{"p0", open01()}, {"k", count()}, {"n", count()}},
      [](const Params& p) {
        return formulas::one_shot_hit(get(p, "p0"), get(p, "k"), get(p, "n"));
      });

  add("refresh_exponential", "refreshed hit probability floor, exponential form",
      "1 - exp(-n * sum_p_lower)",
      {{"sum_p_lower", nonnegative()}, {"n", count()}},
      [](const Params& p) {
        return 1.0 - std::exp(-get(p, "n") * get(p, "sum_p_lower"));
      });

  add("approx_refresh", "refreshed hit floor surviving per-round sampler drift",
      "1 - exp(-n * sum_clipped_margin)",
      {{"sum_clipped_margin", nonnegative()}, {"n", count()}},
      [](const Params& p) {
        return 1.0 - std::exp(-get(p, "n") * get(p, "sum_clipped_margin"));
      });

  add("topset_concentration", "mass outside the best completions after k rounds",
      "((1-p_star)/p_star) * exp(-k*gamma/beta)",
      {{"p_star", open01()}, {"k", nonnegative()}, {"gamma", positive()},
       {"beta", positive()}},
      [](const Params& p) {
        return formulas::topset_concentration(get(p, "p_star"), get(p, "k"),
                                              get(p, "gamma"), get(p, "beta"));
      });

  add("reward_suboptimality", "reward shortfall after k rounds of exact refresh",
      "reward_span * ((1-p_star)/p_star) * exp(-k*gamma/beta)",
      {{"p_star", open01()}, {"k", nonnegative()}, {"gamma", positive()},
       {"beta", positive()}, {"reward_span", positive()}},
      [](const Params& p) {
        return formulas::reward_suboptimality(get(p, "p_star"), get(p, "k"),
                                              get(p, "gamma"), get(p, "beta"),
                                              get(p, "reward_span"));
      });

  add("lattice_rounds", "rounds whose accumulated tilt lands nearest the target",
      "round(beta / beta_eff)", {{"beta", positive()}, {"beta_eff", positive()}},
      [](const Params& p) {
        return formulas::lattice_rounds(get(p, "beta"), get(p, "beta_eff"));
      },
      [](const Params& p) {
        return std::map<std::string, double>{
            {"lattice_error_bound", formulas::lattice_error_bound(get(p, "beta"))}};
      });

  add("lattice_sup_log", "log-density price of the nearest reachable tilt strength",
      "reward_span / (2*beta)",
      {{"reward_span", nonnegative()}, {"beta", positive()}},
      [](const Params& p) {
        return formulas::lattice_sup_log(get(p, "reward_span"), get(p, "beta"));
      });

  add("lattice_tv", "total-variation price of the nearest reachable tilt strength",
      "tanh(reward_span / (4*beta))",
      {{"reward_span", nonnegative()}, {"beta", positive()}},
      [](const Params& p) {
        return formulas::lattice_tv(get(p, "reward_span"), get(p, "beta"));
      });

  add("ess_temperature_cost",
      "rounds times per-round weight second moment for a binary verifier",
      "ceil(beta/beta_eff) * ((1-p) + p*exp(2/beta)) / (1 + p*(exp(1/beta)-1))^2",
      {{"beta", positive()}, {"p", open01()}, {"beta_eff", positive()}},
      [](const Params& p) {
        if (get(p, "beta") < get(p, "beta_eff"))
          throw std::domain_error("parameter 'beta' must be at least 'beta_eff'");
        return formulas::ess_temperature_cost(get(p, "beta"), get(p, "p"),
                                              get(p, "beta_eff"));
      });

  add("pmd_regret_rhs", "regret budget of k inexact mirror steps",
      "beta*comparator_kl + k*reward_span^2/(8*beta) + beta*drift_sum",
      {{"beta", positive()}, {"comparator_kl", nonnegative()}, {"k", count()},
       {"reward_span", nonnegative()}, {"drift_sum", nonnegative()}},
      [](const Params& p) {
        return formulas::pmd_regret_rhs(get(p, "beta"), get(p, "comparator_kl"),
                                        get(p, "k"), get(p, "reward_span"),
                                        get(p, "drift_sum"));
      });

  add("inner_drift", "mirror-step drift certified by inner training excess",
      "lambda*sqrt(2*xi/mu) + zeta",
      {{"xi", nonnegative()}, {"mu", positive()}, {"lambda", positive()},
       {"zeta", nonnegative()}},
      [](const Params& p) {
        return formulas::inner_drift(get(p, "xi"), get(p, "mu"), get(p, "lambda"),
                                     get(p, "zeta"));
      });

  add("forward_kl_route", "drift budget assembled from round-level fit residuals",
      "kappa_k * (inf_f + 2*delta_gen + 2*delta_norm + eps_opt)",
      {{"kappa_k", positive()}, {"inf_f", nonnegative()}, {"delta_gen", nonnegative()},
       {"delta_norm", nonnegative()}, {"eps_opt", nonnegative()}},
      [](const Params& p) {
        return formulas::forward_kl_route(get(p, "kappa_k"), get(p, "inf_f"),
                                          get(p, "delta_gen"), get(p, "delta_norm"),
                                          get(p, "eps_opt"));
      });

  add("forward_kl_drift",
      "drift through a bounded comparator density and a local band",
      "c_k*(1+rho_k)/(1-rho_k) * sqrt(2*f_k/(1-a_rho))",
      {{"c_k", positive()}, {"rho_k", band()}, {"f_k", nonnegative()}},
      [](const Params& p) {
        return formulas::forward_kl_drift(get(p, "c_k"), get(p, "rho_k"), get(p, "f_k"));
      });

  add("e2e_assembled", "one-shot replacement certificate assembled from residuals",
      "beta*kappa*(approximation + 2*delta_gen + 2*delta_norm + eps_opt)",
      {{"beta", positive()}, {"kappa", positive()}, {"approximation", nonnegative()},
       {"delta_gen", nonnegative()}, {"delta_norm", nonnegative()},
       {"eps_opt", nonnegative()}},
      [](const Params& p) {
        return formulas::e2e_assembled(get(p, "beta"), get(p, "kappa"),
                                       get(p, "approximation"), get(p, "delta_gen"),
                                       get(p, "delta_norm"), get(p, "eps_opt"));
      });

  // Scale statements with an unspecified universal constant: each displayed
  // term is reported separately and nothing is asserted against measurements.
  add("oneshot_barrier",
      "sample scale needed for both coverage and weighted estimation, terms only",
      "max(log(1/delta)/p, l^2*c2*log(1/delta)/epsilon^2), constant unspecified",
      {{"p", open01()}, {"delta", open01()}, {"l", positive()}, {"c2", positive()},
       {"epsilon", positive()}},
      [](const Params& p) {
        double cov = std::log(1.0 / get(p, "delta")) / get(p, "p");
        double ess = get(p, "l") * get(p, "l") * get(p, "c2") *
                     std::log(1.0 / get(p, "delta")) /
                     (get(p, "epsilon") * get(p, "epsilon"));
        return cov > ess ? cov : ess;
      },
      [](const Params& p) {
        double cov = std::log(1.0 / get(p, "delta")) / get(p, "p");
        double ess = get(p, "l") * get(p, "l") * get(p, "c2") *
                     std::log(1.0 / get(p, "delta")) /
                     (get(p, "epsilon") * get(p, "epsilon"));
        return std::map<std::string, double>{{"coverage_term", cov}, {"ess_term", ess}};
      },
      false);

  add("oneshot_gen_scale",
      "generalization residual scale across prompts and rollouts, terms only",
      "complexity_prompt + complexity_rollout + r*sqrt(log(1/delta)/m) + "
      "r*sqrt(log(1/delta)/(m*n)), constant unspecified",
      {{"complexity_prompt", nonnegative()}, {"complexity_rollout", nonnegative()},
       {"r", positive()}, {"delta", open01()}, {"m", count()}, {"n", count()}},
      [](const Params& p) {
        double tail = std::log(1.0 / get(p, "delta"));
        return get(p, "complexity_prompt") + get(p, "complexity_rollout") +
               get(p, "r") * std::sqrt(tail / get(p, "m")) +
               get(p, "r") * std::sqrt(tail / (get(p, "m") * get(p, "n")));
      },
      [](const Params& p) {
        double tail = std::log(1.0 / get(p, "delta"));
        return std::map<std::string, double>{
            {"prompt_tail_term", get(p, "r") * std::sqrt(tail / get(p, "m"))},
            {"rollout_tail_term",
             get(p, "r") * std::sqrt(tail / (get(p, "m") * get(p, "n")))}};
      },
      false);

  add("oneshot_norm_scale", "normalizer residual scale, terms only",
      "w_max*l_log*r_beta*exp(-r_min/beta)*sqrt(log(m/delta)/n), constant unspecified",
      {{"w_max", positive()}, {"l_log", positive()}, {"r_beta", positive()},
       {"r_min", any_real()}, {"beta", positive()}, {"m", count()}, {"n", count()},
       {"delta", open01()}},
      [](const Params& p) {
        return get(p, "w_max") * get(p, "l_log") * get(p, "r_beta") *
               std::exp(-get(p, "r_min") / get(p, "beta")) *
               std::sqrt(std::log(get(p, "m") / get(p, "delta")) / get(p, "n"));
      },
      {}, false);

  add("adaptive_union_failure",
      "failure budget of a refreshed trajectory by summing per-round failures",
      "min(1, sum_round_failures)", {{"sum_round_failures", nonnegative()}},
      [](const Params& p) {
        double s = get(p, "sum_round_failures");
        return s < 1.0 ? s : 1.0;
      });

  return reg;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> reg = build_registry();
  return reg;
}

const Entry* find(const std::string& name) {
  for (const auto& e : registry())
    if (e.spec.name == name) return &e;
  return nullptr;
}

}  // namespace

const std::vector<BoundSpec>& catalog() {
  static const std::vector<BoundSpec> specs = [] {
    std::vector<BoundSpec> out;
    for (const auto& e : registry()) out.push_back(e.spec);
    return out;
  }();
  return specs;
}

bool has_entry(const std::string& name) { return find(name) != nullptr; }

BoundReport evaluate(const std::string& name, const Params& params) {
  const Entry* entry = find(name);
  if (!entry) throw std::invalid_argument("unknown bound '" + name + "'");

  Params clean = params;
  std::optional<double> measured;
  if (auto it = clean.find("measured"); it != clean.end()) {
    if (!entry->asserts)
      throw std::domain_error("bound '" + name +
                              "' only evaluates displayed terms; it does not accept "
                              "a measured value");
    measured = it->second;
    clean.erase(it);
  }
  for (const auto& [key, value] : clean) {
    (void)value;
    bool known = false;
    for (const auto& p : entry->spec.params) known |= (p == key);
    if (!known)
      throw std::domain_error("bound '" + name + "' has no parameter '" + key + "'");
  }
  for (std::size_t i = 0; i < entry->spec.params.size(); ++i) {
    const auto& key = entry->spec.params[i];
    auto it = clean.find(key);
    if (it == clean.end())
      throw std::domain_error("bound '" + name + "' missing parameter '" + key + "'");
    if (!entry->domains[i].ok(it->second))
      throw std::domain_error("parameter '" + key + "' of bound '" + name +
                              "' must be " + entry->domains[i].description);
  }

  BoundReport report;
  report.name = name;
  report.inputs = clean;
  report.bound = entry->eval(clean);
  if (entry->extras) report.values = entry->extras(clean);
  if (measured) {
    report.measured = *measured;
    report.satisfied = *measured <= report.bound + 1e-12;
  }
  return report;
}

}  // namespace tiltlab::bounds

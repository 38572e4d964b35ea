#include "tiltlab/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "tiltlab/rng.hpp"

namespace tiltlab::fitting {

namespace {

using estimator::PromptFragment;

// sufficient statistics of a fragment: mean weight per completion and overall
struct FragmentStats {
  Vec histogram;
  double mean_weight = 0.0;
};

FragmentStats fragment_stats(const PromptFragment& frag, std::size_t n_actions) {
  FragmentStats s;
  s.histogram.assign(n_actions, 0.0);
  for (const auto& rec : frag.records) {
    if (rec.completion >= n_actions)
      throw std::out_of_range("record completion index out of range for prompt '" +
                              frag.prompt_id + "'");
    s.histogram[rec.completion] += rec.weight;
  }
  double n = double(frag.records.size());
  for (double& v : s.histogram) {
    v /= n;
    s.mean_weight += v;
  }
  return s;
}

double stats_nll(const Vec& probs, const FragmentStats& s) {
  double acc = 0.0;
  for (std::size_t y = 0; y < probs.size(); ++y) {
    if (s.histogram[y] == 0.0) continue;
    if (probs[y] <= 0.0) return core::kInf;
    acc += s.histogram[y] * -std::log(probs[y]);
  }
  return acc;
}

}  // namespace

double weighted_nll(const TabularPolicy& policy, const WeightedDataset& data) {
  double acc = 0.0;
  for (const auto& frag : data.fragments) {
    const Vec& probs = policy.at(frag.prompt_id);
    double l = stats_nll(probs, fragment_stats(frag, probs.size()));
    if (std::isinf(l)) return core::kInf;
    acc += l;
  }
  return acc / double(data.fragments.size());
}

double weighted_nll(const SoftmaxPolicy& policy, const WeightedDataset& data) {
  auto tab = policy.to_tabular();
  return weighted_nll(tab, data);
}

SoftmaxPolicy nll_gradient(const SoftmaxPolicy& policy, const WeightedDataset& data) {
  SoftmaxPolicy grad;
  double m = double(data.fragments.size());
  for (const auto& frag : data.fragments) {
    Vec probs = core::softmax(policy.logits_of(frag.prompt_id));
    auto s = fragment_stats(frag, probs.size());
    Vec g(probs.size());
    for (std::size_t a = 0; a < g.size(); ++a)
      g[a] = (s.mean_weight * probs[a] - s.histogram[a]) / m;
    grad.logits[frag.prompt_id] = std::move(g);
  }
  return grad;
}

FitResult fit(const WeightedDataset& data, const PromptSet& prompts,
              const FitConfig& config) {
  if (config.step_size <= 0.0) throw std::invalid_argument("step size must be positive");
  if (config.kind == OptimizerKind::Stochastic && config.minibatch == 0)
    throw std::invalid_argument("minibatch size must be at least 1");

  SoftmaxPolicy policy;
  if (config.init) {
    policy = *config.init;
  } else {
    for (const auto& p : prompts.prompts)
      policy.logits[p.id] = Vec(p.size(), 0.0);
  }

  std::vector<FragmentStats> stats;
  std::vector<Vec*> logit_slots;
  for (const auto& frag : data.fragments) {
    Vec& logits = policy.logits.at(frag.prompt_id);
    stats.push_back(fragment_stats(frag, logits.size()));
    logit_slots.push_back(&logits);
  }

  auto current_loss = [&] {
    double acc = 0.0;
    for (std::size_t fi = 0; fi < stats.size(); ++fi) {
      double l = stats_nll(core::softmax(*logit_slots[fi]), stats[fi]);
      if (std::isinf(l)) return core::kInf;
      acc += l;
    }
    return acc / double(stats.size());
  };

  FitResult result;
  double initial = current_loss();
  result.trace.loss.push_back(initial);

  struct FlatRecord {
    std::size_t fragment;
    std::size_t index;
  };
  std::vector<FlatRecord> flat;
  if (config.kind == OptimizerKind::Stochastic) {
    for (std::size_t fi = 0; fi < data.fragments.size(); ++fi)
      for (std::size_t i = 0; i < data.fragments[fi].records.size(); ++i)
        flat.push_back({fi, i});
  }
  SplitRng rng = SplitRng(config.seed).derive("sgd");
  double m = double(data.fragments.size());

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (config.kind == OptimizerKind::FullGradient) {
      // the objective separates across prompts, so each prompt descends on
      // its own fragment mean
      for (std::size_t fi = 0; fi < stats.size(); ++fi) {
        Vec& logits = *logit_slots[fi];
        Vec probs = core::softmax(logits);
        for (std::size_t a = 0; a < logits.size(); ++a)
          logits[a] -= config.step_size *
                       (stats[fi].mean_weight * probs[a] - stats[fi].histogram[a]);
      }
    } else {
      std::map<std::size_t, Vec> acc;
      for (std::size_t b = 0; b < config.minibatch; ++b) {
        const auto& pick =
            flat[std::size_t(rng.next_u64() % std::uint64_t(flat.size()))];
        const auto& rec = data.fragments[pick.fragment].records[pick.index];
        Vec probs = core::softmax(*logit_slots[pick.fragment]);
        auto it = acc.try_emplace(pick.fragment, Vec(probs.size(), 0.0)).first;
        Vec& g = it->second;
        for (std::size_t a = 0; a < g.size(); ++a) g[a] += rec.weight * probs[a];
        g[rec.completion] -= rec.weight;
      }
      double scale = config.step_size * m / double(config.minibatch);
      for (auto& [fi, g] : acc) {
        Vec& logits = *logit_slots[fi];
        for (std::size_t a = 0; a < logits.size(); ++a) logits[a] -= scale * g[a];
      }
    }
    double loss = current_loss();
    result.trace.loss.push_back(loss);
    if (std::isfinite(initial) && loss > 10.0 * initial)
      throw std::runtime_error("fit diverged at step " + std::to_string(step + 1) +
                               ": loss " + std::to_string(loss) + " exceeds 10x " +
                               std::to_string(initial));
  }
  result.policy = std::move(policy);
  return result;
}

double forward_kl(const std::vector<BoltzmannTarget>& targets,
                  const TabularPolicy& policy, const PromptSet& prompts) {
  if (targets.size() != prompts.prompts.size())
    throw std::invalid_argument("one target per prompt required");
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double kl = core::kl_divergence(targets[i].target,
                                    policy.at(prompts.prompts[i].id));
    if (std::isinf(kl)) return core::kInf;
    acc += prompts.prompt_weights[i] * kl;
  }
  return acc;
}

double rho_of(const Vec& target, const Vec& policy) {
  if (target.size() != policy.size())
    throw std::invalid_argument("target and policy lengths differ");
  double rho = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (policy[i] <= 0.0) {
      if (target[i] <= 0.0) continue;
      return core::kInf;
    }
    rho = std::max(rho, std::abs(target[i] / policy[i] - 1.0));
  }
  return rho;
}

double rho_of(const std::vector<BoltzmannTarget>& targets, const TabularPolicy& policy) {
  double rho = 0.0;
  for (const auto& t : targets)
    rho = std::max(rho, rho_of(t.target, policy.at(t.prompt_id)));
  return rho;
}

GapDecomposition e2e_decompose(const PromptSet& prompts, std::size_t n, Temperature beta,
                               const FitConfig& config, std::uint64_t seed) {
  auto data = estimator::make_dataset(prompts, n, beta, seed);

  std::vector<BoltzmannTarget> targets;
  for (const auto& p : prompts.prompts)
    targets.push_back(boltzmann::build_target(p, beta));

  // same rollouts, weights from the exact normalizer instead of the estimate
  WeightedDataset oracle = data;
  for (std::size_t fi = 0; fi < oracle.fragments.size(); ++fi) {
    auto& frag = oracle.fragments[fi];
    frag.log_zhat = targets[fi].log_partition;
    frag.zhat = targets[fi].partition;
    for (auto& rec : frag.records)
      rec.weight = std::exp(rec.reward / beta.beta - frag.log_zhat);
  }

  auto population_loss = [&](const TabularPolicy& policy) {
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Vec& probs = policy.at(prompts.prompts[i].id);
      for (std::size_t y = 0; y < targets[i].target.size(); ++y) {
        double t = targets[i].target[y];
        if (t == 0.0) continue;
        if (probs[y] <= 0.0) return core::kInf;
        acc += t * -std::log(probs[y]);
      }
    }
    return acc / double(targets.size());
  };

  auto run = fit(data, prompts, config);

  TabularPolicy init_tab;
  if (config.init) {
    init_tab = config.init->to_tabular();
  } else {
    for (const auto& p : prompts.prompts)
      init_tab.set(p.id, Vec(p.size(), 1.0 / double(p.size())));
  }
  TabularPolicy fitted_tab = run.policy.to_tabular();
  TabularPolicy target_tab;
  for (std::size_t i = 0; i < targets.size(); ++i)
    target_tab.set(prompts.prompts[i].id, targets[i].target);

  std::vector<TabularPolicy> grid = {init_tab, fitted_tab, target_tab};
  SplitRng grid_rng = SplitRng(seed).derive("policy-grid");
  for (int g = 0; g < 8; ++g) {
    TabularPolicy random;
    for (const auto& p : prompts.prompts)
      random.set(p.id, grid_rng.simplex_point(p.size()));
    grid.push_back(std::move(random));
  }

  GapDecomposition out;
  out.approximation = 0.0;  // per-prompt softmax reaches every target exactly
  double emp_min = core::kInf;
  for (const auto& policy : grid) {
    double pop = population_loss(policy);
    double orc = weighted_nll(policy, oracle);
    double emp = weighted_nll(policy, data);
    if (std::isfinite(pop) && std::isfinite(orc))
      out.delta_gen = std::max(out.delta_gen, std::abs(pop - orc));
    if (std::isfinite(orc) && std::isfinite(emp))
      out.delta_norm = std::max(out.delta_norm, std::abs(orc - emp));
    if (emp < emp_min) emp_min = emp;
  }
  for (double l : run.trace.loss)
    if (l < emp_min) emp_min = l;
  out.eps_opt = run.trace.loss.back() - emp_min;

  out.rho = rho_of(targets, fitted_tab);
  out.kappa = bounds::formulas::transfer_kappa(out.rho);
  out.in_regime = out.rho < 1.0 && bounds::formulas::transfer_a(out.rho) < 1.0;
  out.assembled = bounds::formulas::e2e_assembled(beta.beta, out.kappa,
                                                 out.approximation, out.delta_gen,
                                                 out.delta_norm, out.eps_opt);
  out.actual = boltzmann::value_gap(fitted_tab, targets, prompts, beta);
  out.dominated = out.actual <= out.assembled + 1e-12;
  return out;
}

std::pair<BoundReport, BoundReport> optimizer_certificates(
    const CertificateParams& params) {
  auto stationarity = bounds::evaluate(
      "sgd_stationarity",
      {{"initial_gap", params.initial_gap}, {"smoothness", params.smoothness},
       {"eta", params.eta}, {"sigma2", params.sigma2}, {"batch", params.batch},
       {"steps", params.steps}});
  auto excess = bounds::evaluate(
      "pl_excess",
      {{"initial_excess", params.initial_gap}, {"smoothness", params.smoothness},
       {"mu", params.mu}, {"eta", params.eta}, {"sigma2", params.sigma2},
       {"batch", params.batch}, {"steps", params.steps}});
  return {std::move(stationarity), std::move(excess)};
}

QuadraticRunResult run_synthetic_quadratic(const CertificateParams& params,
                                           std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("dimension must be at least 1");
  if (params.eta > 1.0 / params.smoothness)
    throw std::invalid_argument("step size exceeds 1/smoothness");
  Vec lambda(dim, params.smoothness);
  if (dim > 1) {
    for (std::size_t i = 0; i < dim; ++i)
      lambda[i] =
          params.mu + (params.smoothness - params.mu) * double(i) / double(dim - 1);
  }
  double lsum = 0.0;
  for (double l : lambda) lsum += l;
  double c = std::sqrt(2.0 * params.initial_gap / lsum);
  Vec theta(dim, c);

  auto value = [&] {
    double f = 0.0;
    for (std::size_t i = 0; i < dim; ++i) f += 0.5 * lambda[i] * theta[i] * theta[i];
    return f;
  };

  SplitRng rng = SplitRng(seed).derive("quad");
  double noise_sd =
      params.sigma2 > 0.0 ? std::sqrt(params.sigma2 / (params.batch * double(dim)))
                          : 0.0;
  QuadraticRunResult out;
  std::size_t steps = std::size_t(params.steps);
  for (std::size_t t = 0; t < steps; ++t) {
    double g2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double g = lambda[i] * theta[i];
      g2 += g * g;
      double noisy = noise_sd > 0.0 ? g + noise_sd * rng.normal() : g;
      theta[i] -= params.eta * noisy;
    }
    out.mean_sq_grad += g2;
  }
  out.mean_sq_grad /= double(steps);
  out.final_excess = value();
  return out;
}

}  // namespace tiltlab::fitting

#include "tiltlab/boltzmann.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tiltlab::boltzmann {

BoltzmannTarget build_target(const PromptInstance& prompt, Temperature beta) {
  const std::size_t n = prompt.size();
  const double b = beta.beta;
  const double rmax = prompt.r_max();

  // Z = exp(rmax/beta) * sum_i ref_i * exp((r_i - rmax)/beta); the shift keeps
  // the accumulation in [0, 1] so beta = 0.05 stays representable.
  double shifted_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (prompt.reference[i] <= 0.0) continue;
    shifted_sum += prompt.reference[i] * std::exp((prompt.reward[i] - rmax) / b);
  }
  BoltzmannTarget t;
  t.prompt_id = prompt.id;
  t.beta = b;
  t.log_partition = rmax / b + std::log(shifted_sum);
  t.partition = std::exp(t.log_partition);
  t.target.resize(n);
  t.canonical_weight.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.canonical_weight[i] = std::exp(prompt.reward[i] / b - t.log_partition);
    t.target[i] = prompt.reference[i] <= 0.0 ? 0.0
                                             : prompt.reference[i] * t.canonical_weight[i];
  }
  t.target = core::make_simplex(std::move(t.target));
  return t;
}

std::vector<BoltzmannTarget> build_targets(const PromptSet& prompts, Temperature beta) {
  std::vector<BoltzmannTarget> out;
  out.reserve(prompts.prompts.size());
  for (const auto& p : prompts.prompts) out.push_back(build_target(p, beta));
  return out;
}

double rlvr_value(const TabularPolicy& policy, const PromptSet& prompts, Temperature beta) {
  double acc = 0.0;
  for (std::size_t k = 0; k < prompts.prompts.size(); ++k) {
    const auto& prompt = prompts.prompts[k];
    const Vec& pi = policy.at(prompt.id);
    if (pi.size() != prompt.size())
      throw std::invalid_argument("policy length mismatch on prompt '" + prompt.id + "'");
    double kl = core::kl_divergence(pi, prompt.reference);
    if (kl == core::kInf) return -core::kInf;
    double expected_reward = 0.0;
    for (std::size_t i = 0; i < prompt.size(); ++i)
      expected_reward += pi[i] * prompt.reward[i];
    acc += prompts.prompt_weights[k] * (expected_reward - beta.beta * kl);
  }
  return acc;
}

double value_gap(const TabularPolicy& policy, const std::vector<BoltzmannTarget>& targets,
                 const PromptSet& prompts, Temperature beta) {
  double acc = 0.0;
  for (const auto& t : targets) {
    std::size_t k = prompts.index_of(t.prompt_id);
    double kl = core::kl_divergence(policy.at(t.prompt_id), t.target);
    if (kl == core::kInf) return core::kInf;
    acc += prompts.prompt_weights[k] * kl;
  }
  return beta.beta * acc;
}

StabilityReport verifier_stability(const PromptInstance& prompt, const Vec& perturbed_reward,
                                   Temperature beta) {
  if (perturbed_reward.size() != prompt.size())
    throw std::invalid_argument("perturbed reward length mismatch");
  StabilityReport rep;
  for (std::size_t i = 0; i < prompt.size(); ++i)
    rep.epsilon = std::max(rep.epsilon, std::abs(perturbed_reward[i] - prompt.reward[i]));

  auto base = build_target(prompt, beta);
  PromptInstance perturbed = prompt;
  perturbed.reward = perturbed_reward;
  auto tilted = build_target(perturbed, beta);

  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt.reference[i] <= 0.0) continue;
    double lr = std::abs(std::log(tilted.target[i]) - std::log(base.target[i]));
    rep.sup_log_ratio = std::max(rep.sup_log_ratio, lr);
  }
  rep.tv = core::total_variation(tilted.target, base.target);
  rep.value_gap = beta.beta * core::kl_divergence(tilted.target, base.target);

  rep.sup_log_bound = 2.0 * rep.epsilon / beta.beta;
  rep.tv_bound = std::tanh(rep.epsilon / beta.beta);
  rep.value_bound = 2.0 * rep.epsilon;
  rep.all_within = rep.sup_log_ratio <= rep.sup_log_bound + 1e-12 &&
                   rep.tv <= rep.tv_bound + 1e-12 &&
                   rep.value_gap <= rep.value_bound + 1e-12;
  return rep;
}

Vec boltzmann_path(const PromptInstance& prompt, double a) {
  if (!(a >= 0.0) || !std::isfinite(a))
    throw std::invalid_argument("path parameter must be finite and >= 0");
  const std::size_t n = prompt.size();
  const double rmax = prompt.r_max();
  Vec out(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (prompt.reference[i] <= 0.0) continue;
    out[i] = prompt.reference[i] * std::exp(a * (prompt.reward[i] - rmax));
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

double path_reward_mean(const PromptInstance& prompt, double a) {
  Vec pi = boltzmann_path(prompt, a);
  double mean = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) mean += pi[i] * prompt.reward[i];
  return mean;
}

double path_reward_variance(const PromptInstance& prompt, double a) {
  Vec pi = boltzmann_path(prompt, a);
  double mean = 0.0, second = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    mean += pi[i] * prompt.reward[i];
    second += pi[i] * prompt.reward[i] * prompt.reward[i];
  }
  return second - mean * mean;
}

}  // namespace tiltlab::boltzmann

#ifndef TILTLAB_BOLTZMANN_HPP
#define TILTLAB_BOLTZMANN_HPP

#include <string>
#include <vector>

#include "tiltlab/core.hpp"

namespace tiltlab::boltzmann {

using core::PromptInstance;
using core::PromptSet;
using core::TabularPolicy;
using core::Temperature;
using core::Vec;

/// Exponentially tilted reference distribution for one prompt, with its
/// normalizer and the unit-mean sampling weight that induces it.
struct BoltzmannTarget {
  std::string prompt_id;
  double beta = 1.0;
  double partition = 1.0;      // Z = E_ref[exp(r/beta)]
  double log_partition = 0.0;  // computed max-shifted, safe at small beta
  Vec target;
  Vec canonical_weight;        // exp(r/beta)/Z, mean 1 under the reference
};

BoltzmannTarget build_target(const PromptInstance& prompt, Temperature beta);

std::vector<BoltzmannTarget> build_targets(const PromptSet& prompts, Temperature beta);

/// Reward minus scaled KL-to-reference, averaged over prompts.
/// Returns the -inf sentinel when the policy leaves the reference support.
double rlvr_value(const TabularPolicy& policy, const PromptSet& prompts, Temperature beta);

/// Value shortfall of a policy against the tilted targets, as a scaled
/// reverse KL. Agrees with the rlvr_value difference on finite cases.
double value_gap(const TabularPolicy& policy, const std::vector<BoltzmannTarget>& targets,
                 const PromptSet& prompts, Temperature beta);

struct StabilityReport {
  double epsilon = 0.0;            // sup-norm reward perturbation
  double sup_log_ratio = 0.0;
  double tv = 0.0;
  double value_gap = 0.0;          // value cost of aiming at the perturbed target
  double sup_log_bound = 0.0;      // 2*eps/beta
  double tv_bound = 0.0;           // tanh(eps/beta)
  double value_bound = 0.0;        // 2*eps
  bool all_within = false;
};

StabilityReport verifier_stability(const PromptInstance& prompt, const Vec& perturbed_reward,
                                   Temperature beta);

/// Tilt path pi_a proportional to ref * exp(a*r).
Vec boltzmann_path(const PromptInstance& prompt, double a);
double path_reward_mean(const PromptInstance& prompt, double a);
double path_reward_variance(const PromptInstance& prompt, double a);

}  // namespace tiltlab::boltzmann

#endif

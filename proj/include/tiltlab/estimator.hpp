#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tiltlab/bounds.hpp"
#include "tiltlab/core.hpp"

// Rollout sampling from the reference, empirical normalizers and weights,
// effective sample size, coverage events, support gaps, and the closed-form
// deviation bounds that govern them.
namespace tiltlab::estimator {

using core::PromptInstance;
using core::PromptSet;
using core::Temperature;
using core::Vec;

struct RolloutBatch {
  std::string prompt_id;
  std::vector<std::size_t> samples;
  Vec rewards;
  std::uint64_t rng_seed = 0;
  std::size_t round = 0;
};

struct WeightedRecord {
  std::string prompt_id;
  std::size_t completion = 0;
  double reward = 0.0;
  double weight = 0.0;
  std::size_t round = 0;
};

// Per-prompt slice of a weighted dataset: the records plus the empirical
// normalizer they share.
struct PromptFragment {
  std::string prompt_id;
  double zhat = 0.0;
  double log_zhat = 0.0;
  std::vector<WeightedRecord> records;

  double mean_weight() const;
};

struct WeightedDataset {
  double beta = 1.0;
  std::vector<PromptFragment> fragments;

  const PromptFragment& by_id(const std::string& prompt_id) const;
  void write_records(std::ostream& out) const;
  static WeightedDataset read_records(std::istream& in, double beta);
};

// N independent draws from the reference vector, keyed by (seed, prompt id,
// round) so batches replay identically regardless of execution order.
RolloutBatch sample_rollouts(const PromptInstance& prompt, std::size_t n,
                             std::uint64_t seed, std::size_t round = 0);

// Draws from an explicit sampler instead of the prompt's reference, used when
// the sampling policy has moved away from it.
RolloutBatch sample_rollouts_from(const PromptInstance& prompt, const Vec& sampler,
                                  std::size_t n, std::uint64_t seed, std::size_t round = 0);

// Zhat = mean exp(r/beta) over the batch, computed max-shifted; weights are
// exp(r/beta)/Zhat so each fragment has mean weight one.
PromptFragment empirical_weights(const RolloutBatch& batch, Temperature beta);

WeightedDataset make_dataset(const PromptSet& prompts, std::size_t n, Temperature beta,
                             std::uint64_t seed, std::size_t round = 0);

// Atomic distribution on the sampled support, mean of weight times indicator.
Vec empirical_target(const PromptFragment& fragment, std::size_t n_completions);

struct EssReport {
  double ess = 0.0;
  double c2 = 0.0;
  double w_max = 0.0;
};

// Population mode: second moment of the canonical weight under the reference.
EssReport ess_population(const PromptInstance& prompt, Temperature beta);
// Sample mode: (sum w)^2 / sum w^2.
double ess_sample(const Vec& weights);

struct SupportGapReport {
  double gap = 0.0;
  Vec conditional;      // target conditioned on the support
  double target_mass = 0.0;
};

// Exact value price of confining a policy to the given support set.
SupportGapReport support_gap(const PromptInstance& prompt,
                             const std::vector<std::size_t>& support, Temperature beta);

// {i : r_i >= max r - gamma}
std::vector<std::size_t> near_optimal_set(const PromptInstance& prompt, double gamma);

// Miss probability, inverted sample requirements, and the two barrier terms.
BoundReport coverage_bounds(double p_gamma, double n, double delta,
                            std::optional<double> m = std::nullopt);

// Probability that k independent draws from the policy hit the success set.
double passk(const Vec& policy, const std::vector<std::size_t>& success_set, std::size_t k);

enum class ConcentrationKind {
  Bernstein,
  SelfNormalized,
  HoeffdingPartition,
  UniformNormalizer,
  PlNormalizer,
};

BoundReport concentration_bound(ConcentrationKind kind, const bounds::Params& params);

// Continuous optimum of total variance-over-allocation subject to per-cell
// floors and a total budget, by water-filling on the active set.
std::vector<double> neyman_allocation(const Vec& variances, const Vec& floors,
                                      double budget);

}  // namespace tiltlab::estimator

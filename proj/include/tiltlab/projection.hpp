#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/core.hpp"
#include "tiltlab/rng.hpp"

// Which (sampler, weight) pairs fit which policy: the induced target of a
// weighted likelihood, the matching law recovering a desired target, the
// irreducible gap when weights do not match, capped weights, and the
// token-level coefficients a sequence-level weight requires.
namespace tiltlab::projection {

using core::PromptInstance;
using core::Temperature;
using core::Vec;

struct SamplerWeightPair {
  std::string prompt_id;
  Vec sampler;
  Vec weight;

  double mean_weight() const;
  static SamplerWeightPair make(std::string prompt_id, Vec sampler, Vec weight);
};

struct InducedTarget {
  std::string prompt_id;
  Vec distribution;
  double mean_weight = 0.0;
};

// Distribution proportional to sampler times weight. Verifies internally that
// the weighted NLL of a policy decomposes as mean_weight * (KL(induced||policy)
// + H(induced)) at three derived test policies.
InducedTarget induced_target(const SamplerWeightPair& pair);

// Weighted NLL of a policy under the pair, E_q[w * -log(policy)].
double weighted_cross_entropy(const SamplerWeightPair& pair, const Vec& policy);

// w_i = scale * target_i / sampler_i; throws naming the offending index when
// the target puts mass where the sampler has none.
Vec matching_weight(const Vec& sampler, const Vec& target, double scale);

// beta * KL(induced || boltzmann target of the prompt); +inf sentinel when the
// induced distribution escapes the reference support.
double mismatch_gap(const SamplerWeightPair& pair, const PromptInstance& prompt,
                    Temperature beta);

struct BaselineReport {
  double baseline = 0.0;
  double mean_weight = 0.0;
  double predicted_mean_weight = 0.0;  // Z * exp(-b/beta)
  double target_deviation = 0.0;       // sup distance from the boltzmann target
  bool matches = false;
};

// Shifting rewards by a per-prompt baseline rescales the weights but leaves
// the induced target at the boltzmann target.
BaselineReport baseline_invariance(const PromptInstance& prompt, Temperature beta,
                                   double baseline);

struct CappedProjection {
  Vec capped;          // u_c
  double alpha = 0.0;  // tilt multiplier found by bisection
  double bias = 0.0;   // beta * KL(sampler*u_c || sampler*ratio)
  bool cap_active = false;
};

// Projects a unit-mean density ratio onto {u : u <= cap, E_sampler[u] = 1}
// by water-filling: u_c = min(alpha * ratio, cap).
CappedProjection capped_projection(const Vec& sampler, const Vec& density_ratio,
                                   double cap, double beta = 1.0);

// Enumerable token-factored sequence space, at most 4096 joint atoms.
struct SequenceSpace {
  std::size_t alphabet = 0;
  std::size_t length = 0;
  Vec joint;  // size alphabet^length, indexed big-endian by token string

  std::size_t size() const { return joint.size(); }
  std::size_t encode(const std::vector<std::size_t>& tokens) const;
  std::vector<std::size_t> decode(std::size_t index) const;

  static SequenceSpace make(std::size_t alphabet, std::size_t length, Vec joint);
  // product of independent per-step distributions
  static SequenceSpace from_steps(const std::vector<Vec>& steps);
};

// Policy over sequences factored as per-prefix conditionals,
// conditional[t][prefix * alphabet + token].
struct AutoregressivePolicy {
  std::size_t alphabet = 0;
  std::size_t length = 0;
  std::vector<Vec> conditional;

  double sequence_prob(const SequenceSpace& space, std::size_t index) const;
  static AutoregressivePolicy uniform(std::size_t alphabet, std::size_t length);
  static AutoregressivePolicy random(std::size_t alphabet, std::size_t length, SplitRng& rng);
};

struct TokenCoefficients {
  std::size_t alphabet = 0;
  std::size_t length = 0;
  // table[t][prefix * alphabet + token] = mean weight given that prefix-token
  std::vector<Vec> table;
  // false where the prefix-token pair has zero probability (excluded)
  std::vector<std::vector<bool>> defined;
};

// Per-step coefficients v_t(h,a) = E_q[w | prefix h, next token a] by
// exhaustive enumeration; requires E_q[w] = 1 within 1e-10.
TokenCoefficients token_coefficients(const SequenceSpace& space, const Vec& sequence_weight);

// E_q[w * -log policy(y)] over whole sequences.
double sequence_weighted_nll(const SequenceSpace& space, const Vec& sequence_weight,
                             const AutoregressivePolicy& policy);

// E_q[sum_t v_t(h_t,a_t) * -log policy(a_t|h_t)] with the given coefficients.
double token_weighted_nll(const SequenceSpace& space, const TokenCoefficients& coeffs,
                          const AutoregressivePolicy& policy);

struct TransferConstants {
  double rho = 0.0;
  double a_rho = 0.0;
  double b_rho = 0.0;
  double kappa = 0.0;
  double gamma = 0.0;
  bool kappa_valid = false;  // a_rho < 1
  bool gamma_valid = false;  // a_rho < 1 and b_rho < 1
};

// Constants transferring reverse KL through forward KL when the two policies
// are within a multiplicative band of width rho.
TransferConstants local_transfer_constants(double rho);

struct RareActionPair {
  double delta = 0.0;
  double epsilon = 0.0;  // exp(-1/delta^2)
  Vec p;                 // (epsilon, 1-epsilon)
  Vec q;                 // (delta, 1-delta)
  double forward_kl = 0.0;  // KL(p||q)
  double reverse_kl = 0.0;  // KL(q||p)
};

// Two-point family where forward KL vanishes while reverse KL blows up,
// showing the multiplicative-band condition cannot be dropped.
RareActionPair rare_action_family(double delta);

}  // namespace tiltlab::projection

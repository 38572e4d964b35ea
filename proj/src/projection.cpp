#include "tiltlab/projection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace tiltlab::projection {

using core::kInf;

double SamplerWeightPair::mean_weight() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < sampler.size(); ++i) acc += sampler[i] * weight[i];
  return acc;
}

SamplerWeightPair SamplerWeightPair::make(std::string prompt_id, Vec sampler, Vec weight) {
  if (sampler.size() != weight.size())
    throw std::invalid_argument("sampler and weight lengths differ");
  SamplerWeightPair pair;
  pair.prompt_id = std::move(prompt_id);
  pair.sampler = core::make_simplex(std::move(sampler));
  for (std::size_t i = 0; i < weight.size(); ++i) {
    double w = weight[i];
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("weights must be finite and nonnegative");
    // atoms the sampler never produces contribute nothing either way
    if (pair.sampler[i] <= 0.0) w = 0.0;
    weight[i] = w;
  }
  pair.weight = std::move(weight);
  return pair;
}

double weighted_cross_entropy(const SamplerWeightPair& pair, const Vec& policy) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pair.sampler.size(); ++i) {
    double mass = pair.sampler[i] * pair.weight[i];
    if (mass <= 0.0) continue;
    if (policy[i] <= 0.0) return kInf;
    acc -= mass * std::log(policy[i]);
  }
  return acc;
}

InducedTarget induced_target(const SamplerWeightPair& pair) {
  double wbar = pair.mean_weight();
  if (!(wbar > 0.0)) throw std::invalid_argument("mean weight must be positive");
  InducedTarget out;
  out.prompt_id = pair.prompt_id;
  out.mean_weight = wbar;
  out.distribution.resize(pair.sampler.size());
  for (std::size_t i = 0; i < pair.sampler.size(); ++i)
    out.distribution[i] = pair.sampler[i] * pair.weight[i] / wbar;
  out.distribution = core::make_simplex(std::move(out.distribution));

  // The reason this object exists: for any policy, the weighted cross-entropy
  // splits as wbar * (KL(induced || policy) + H(induced)). Spot-check the
  // identity on a few derived policies before handing the target out.
  SplitRng rng(0x1d9c2a57u);
  double entropy = core::entropy(out.distribution);
  for (int check = 0; check < 3; ++check) {
    Vec pol = rng.simplex_point(out.distribution.size());
    for (auto& x : pol) x = 0.9 * x + 0.1 / static_cast<double>(pol.size());
    double lhs = weighted_cross_entropy(pair, pol);
    double rhs = wbar * (core::kl_divergence(out.distribution, pol) + entropy);
    if (std::abs(lhs - rhs) > 1e-10 * std::max(1.0, std::abs(lhs)))
      throw std::logic_error("induced-target decomposition identity violated");
  }
  return out;
}

Vec matching_weight(const Vec& sampler, const Vec& target, double scale) {
  if (sampler.size() != target.size())
    throw std::invalid_argument("sampler and target lengths differ");
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("scale must be positive and finite");
  Vec w(sampler.size(), 0.0);
  for (std::size_t i = 0; i < sampler.size(); ++i) {
    if (target[i] > 0.0 && sampler[i] <= 0.0)
      throw std::invalid_argument("target puts mass outside the sampler support at index " +
                                  std::to_string(i));
    if (sampler[i] > 0.0) w[i] = scale * target[i] / sampler[i];
  }
  return w;
}

double mismatch_gap(const SamplerWeightPair& pair, const PromptInstance& prompt,
                    Temperature beta) {
  auto induced = induced_target(pair);
  auto star = boltzmann::build_target(prompt, beta);
  double kl = core::kl_divergence(induced.distribution, star.target);
  if (kl == kInf) return kInf;
  return beta.beta * kl;
}

BaselineReport baseline_invariance(const PromptInstance& prompt, Temperature beta,
                                   double baseline) {
  if (!std::isfinite(baseline)) throw std::invalid_argument("baseline must be finite");
  auto star = boltzmann::build_target(prompt, beta);
  Vec w(prompt.size(), 0.0);
  for (std::size_t i = 0; i < prompt.size(); ++i)
    w[i] = std::exp((prompt.reward[i] - baseline) / beta.beta);
  auto pair = SamplerWeightPair::make(prompt.id, prompt.reference, std::move(w));
  auto induced = induced_target(pair);

  BaselineReport rep;
  rep.baseline = baseline;
  rep.mean_weight = induced.mean_weight;
  rep.predicted_mean_weight = std::exp(star.log_partition - baseline / beta.beta);
  for (std::size_t i = 0; i < prompt.size(); ++i)
    rep.target_deviation =
        std::max(rep.target_deviation, std::abs(induced.distribution[i] - star.target[i]));
  rep.matches = rep.target_deviation <= 1e-12 &&
                std::abs(rep.mean_weight - rep.predicted_mean_weight) <=
                    1e-9 * rep.predicted_mean_weight;
  return rep;
}

CappedProjection capped_projection(const Vec& sampler, const Vec& density_ratio,
                                   double cap, double beta) {
  Vec q = core::make_simplex(Vec(sampler));
  if (density_ratio.size() != q.size())
    throw std::invalid_argument("density ratio length mismatch");
  double mean = 0.0, max_ratio = 0.0, support_mass = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double r = density_ratio[i];
    if (!std::isfinite(r) || r < 0.0)
      throw std::invalid_argument("density ratio must be finite and nonnegative");
    mean += q[i] * r;
    if (q[i] > 0.0 && r > 0.0) {
      max_ratio = std::max(max_ratio, r);
      support_mass += q[i];
    }
  }
  if (std::abs(mean - 1.0) > 1e-10)
    throw std::invalid_argument("density ratio must have unit mean under the sampler");
  if (cap < 1.0) throw std::invalid_argument("cap below one cannot hold a unit-mean weight");

  CappedProjection out;
  if (cap >= max_ratio) {
    out.capped = density_ratio;
    out.alpha = 1.0;
    out.bias = 0.0;
    out.cap_active = false;
    return out;
  }
  if (cap * support_mass < 1.0 - 1e-12)
    throw std::invalid_argument("cap too small to reach unit mean on the sampler support");

  auto capped_mean = [&](double alpha) {
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
      acc += q[i] * std::min(alpha * density_ratio[i], cap);
    return acc;
  };
  // capped mean rises continuously from 0 toward cap * support mass, so the
  // unit-mean root is unique up to plateaus where every atom is capped
  double lo = 1.0, hi = 2.0;
  while (capped_mean(hi) < 1.0) hi *= 2.0;
  for (int iter = 0; iter < 200 && hi - lo > 1e-13 * hi; ++iter) {
    double mid = 0.5 * (lo + hi);
    (capped_mean(mid) < 1.0 ? lo : hi) = mid;
  }
  out.alpha = 0.5 * (lo + hi);
  out.cap_active = true;
  out.capped.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    out.capped[i] = std::min(out.alpha * density_ratio[i], cap);

  Vec projected(q.size()), original(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    projected[i] = q[i] * out.capped[i];
    original[i] = q[i] * density_ratio[i];
  }
  out.bias = beta * core::kl_divergence(core::make_simplex(std::move(projected)),
                                        core::make_simplex(std::move(original)));
  return out;
}

std::size_t SequenceSpace::encode(const std::vector<std::size_t>& tokens) const {
  std::size_t idx = 0;
  for (std::size_t t = 0; t < length; ++t) idx = idx * alphabet + tokens[t];
  return idx;
}

std::vector<std::size_t> SequenceSpace::decode(std::size_t index) const {
  std::vector<std::size_t> tokens(length);
  for (std::size_t t = length; t-- > 0;) {
    tokens[t] = index % alphabet;
    index /= alphabet;
  }
  return tokens;
}

SequenceSpace SequenceSpace::make(std::size_t alphabet, std::size_t length, Vec joint) {
  if (alphabet < 2) throw std::invalid_argument("alphabet needs at least two tokens");
  if (length < 1) throw std::invalid_argument("length must be at least one");
  std::size_t atoms = 1;
  for (std::size_t t = 0; t < length; ++t) {
    atoms *= alphabet;
    if (atoms > 4096) throw std::invalid_argument("joint enumeration capped at 4096 atoms");
  }
  if (joint.size() != atoms) throw std::invalid_argument("joint size mismatch");
  SequenceSpace space;
  space.alphabet = alphabet;
  space.length = length;
  space.joint = core::make_simplex(std::move(joint));
  return space;
}

SequenceSpace SequenceSpace::from_steps(const std::vector<Vec>& steps) {
  if (steps.empty()) throw std::invalid_argument("need at least one step distribution");
  std::size_t alphabet = steps[0].size();
  std::vector<Vec> clean;
  clean.reserve(steps.size());
  for (const auto& s : steps) {
    if (s.size() != alphabet) throw std::invalid_argument("step alphabet sizes differ");
    clean.push_back(core::make_simplex(Vec(s)));
  }
  std::size_t atoms = 1;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    atoms *= alphabet;
    if (atoms > 4096) throw std::invalid_argument("joint enumeration capped at 4096 atoms");
  }
  Vec joint(atoms, 1.0);
  SequenceSpace space;
  space.alphabet = alphabet;
  space.length = steps.size();
  for (std::size_t idx = 0; idx < atoms; ++idx) {
    std::size_t rest = idx;
    for (std::size_t t = space.length; t-- > 0;) {
      joint[idx] *= clean[t][rest % alphabet];
      rest /= alphabet;
    }
  }
  space.joint = std::move(joint);
  return space;
}

double AutoregressivePolicy::sequence_prob(const SequenceSpace& space, std::size_t index) const {
  auto tokens = space.decode(index);
  double prob = 1.0;
  std::size_t prefix = 0;
  for (std::size_t t = 0; t < length; ++t) {
    prob *= conditional[t][prefix * alphabet + tokens[t]];
    prefix = prefix * alphabet + tokens[t];
  }
  return prob;
}

AutoregressivePolicy AutoregressivePolicy::uniform(std::size_t alphabet, std::size_t length) {
  AutoregressivePolicy pol;
  pol.alphabet = alphabet;
  pol.length = length;
  std::size_t prefixes = 1;
  for (std::size_t t = 0; t < length; ++t) {
    pol.conditional.emplace_back(prefixes * alphabet, 1.0 / static_cast<double>(alphabet));
    prefixes *= alphabet;
  }
  return pol;
}

AutoregressivePolicy AutoregressivePolicy::random(std::size_t alphabet, std::size_t length,
                                                  SplitRng& rng) {
  AutoregressivePolicy pol;
  pol.alphabet = alphabet;
  pol.length = length;
  std::size_t prefixes = 1;
  for (std::size_t t = 0; t < length; ++t) {
    Vec table(prefixes * alphabet);
    for (std::size_t h = 0; h < prefixes; ++h) {
      Vec cond = rng.simplex_point(alphabet);
      for (std::size_t a = 0; a < alphabet; ++a)
        table[h * alphabet + a] = 0.9 * cond[a] + 0.1 / static_cast<double>(alphabet);
    }
    pol.conditional.push_back(std::move(table));
    prefixes *= alphabet;
  }
  return pol;
}

TokenCoefficients token_coefficients(const SequenceSpace& space, const Vec& sequence_weight) {
  if (sequence_weight.size() != space.size())
    throw std::invalid_argument("weight vector size mismatch");
  double mean = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) mean += space.joint[i] * sequence_weight[i];
  if (std::abs(mean - 1.0) > 1e-10)
    throw std::invalid_argument("sequence weight must have unit mean under the joint");

  TokenCoefficients out;
  out.alphabet = space.alphabet;
  out.length = space.length;
  std::vector<Vec> numer, denom;
  std::size_t prefixes = 1;
  for (std::size_t t = 0; t < space.length; ++t) {
    numer.emplace_back(prefixes * space.alphabet, 0.0);
    denom.emplace_back(prefixes * space.alphabet, 0.0);
    prefixes *= space.alphabet;
  }
  for (std::size_t idx = 0; idx < space.size(); ++idx) {
    if (space.joint[idx] <= 0.0) continue;
    auto tokens = space.decode(idx);
    std::size_t prefix = 0;
    for (std::size_t t = 0; t < space.length; ++t) {
      std::size_t cell = prefix * space.alphabet + tokens[t];
      numer[t][cell] += space.joint[idx] * sequence_weight[idx];
      denom[t][cell] += space.joint[idx];
      prefix = cell;
    }
  }
  for (std::size_t t = 0; t < space.length; ++t) {
    Vec row(numer[t].size(), 0.0);
    std::vector<bool> def(numer[t].size(), false);
    for (std::size_t cell = 0; cell < row.size(); ++cell) {
      if (denom[t][cell] > 0.0) {
        row[cell] = numer[t][cell] / denom[t][cell];
        def[cell] = true;
      }
    }
    out.table.push_back(std::move(row));
    out.defined.push_back(std::move(def));
  }
  return out;
}

double sequence_weighted_nll(const SequenceSpace& space, const Vec& sequence_weight,
                             const AutoregressivePolicy& policy) {
  double acc = 0.0;
  for (std::size_t idx = 0; idx < space.size(); ++idx) {
    double mass = space.joint[idx] * sequence_weight[idx];
    if (mass <= 0.0) continue;
    double prob = policy.sequence_prob(space, idx);
    if (prob <= 0.0) return kInf;
    acc -= mass * std::log(prob);
  }
  return acc;
}

double token_weighted_nll(const SequenceSpace& space, const TokenCoefficients& coeffs,
                          const AutoregressivePolicy& policy) {
  double acc = 0.0;
  for (std::size_t idx = 0; idx < space.size(); ++idx) {
    if (space.joint[idx] <= 0.0) continue;
    auto tokens = space.decode(idx);
    std::size_t prefix = 0;
    for (std::size_t t = 0; t < space.length; ++t) {
      std::size_t cell = prefix * space.alphabet + tokens[t];
      double cond = policy.conditional[t][cell];
      if (cond <= 0.0) return kInf;
      acc -= space.joint[idx] * coeffs.table[t][cell] * std::log(cond);
      prefix = cell;
    }
  }
  return acc;
}

TransferConstants local_transfer_constants(double rho) {
  if (!(rho >= 0.0) || rho >= 1.0)
    throw std::domain_error("band width must lie in [0, 1)");
  TransferConstants c;
  c.rho = rho;
  double om = 1.0 - rho;
  c.a_rho = rho / (3.0 * om * om);
  c.b_rho = 2.0 * rho / (3.0 * om * om * om);
  c.kappa_valid = c.a_rho < 1.0;
  c.kappa = c.kappa_valid ? (1.0 + c.b_rho) / (1.0 - c.a_rho) : kInf;
  c.gamma_valid = c.a_rho < 1.0 && c.b_rho < 1.0;
  c.gamma = c.gamma_valid
                ? (1.0 + c.b_rho) * (1.0 + c.a_rho) / ((1.0 - c.a_rho) * (1.0 - c.b_rho))
                : kInf;
  return c;
}

RareActionPair rare_action_family(double delta) {
  if (!(delta > 0.0) || !(delta < 0.5))
    throw std::domain_error("family parameter must lie in (0, 0.5)");
  double eps = std::exp(-1.0 / (delta * delta));
  if (eps <= 0.0)
    throw std::domain_error("rare-action mass underflows at this parameter");
  RareActionPair pair;
  pair.delta = delta;
  pair.epsilon = eps;
  pair.p = {eps, 1.0 - eps};
  pair.q = {delta, 1.0 - delta};
  pair.forward_kl = core::kl_divergence(pair.p, pair.q);
  pair.reverse_kl = core::kl_divergence(pair.q, pair.p);
  return pair;
}

}  // namespace tiltlab::projection

#include "tiltlab/estimator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/rng.hpp"

namespace tiltlab::estimator {

using json = nlohmann::json;

double PromptFragment::mean_weight() const {
  double acc = 0.0;
  for (const auto& r : records) acc += r.weight;
  return records.empty() ? 0.0 : acc / double(records.size());
}

const PromptFragment& WeightedDataset::by_id(const std::string& prompt_id) const {
  for (const auto& f : fragments)
    if (f.prompt_id == prompt_id) return f;
  throw std::out_of_range("no fragment for prompt '" + prompt_id + "'");
}

void WeightedDataset::write_records(std::ostream& out) const {
  for (const auto& f : fragments) {
    for (const auto& r : f.records) {
      json line = {{"prompt", r.prompt_id},
                   {"completion", r.completion},
                   {"reward", r.reward},
                   {"weight", r.weight},
                   {"round", r.round}};
      out << line.dump() << '\n';
    }
  }
}

WeightedDataset WeightedDataset::read_records(std::istream& in, double beta) {
  WeightedDataset data;
  data.beta = beta;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw std::runtime_error("record line " + std::to_string(lineno) +
                               " is not a JSON object");
    for (const char* key : {"prompt", "completion", "reward", "weight", "round"})
      if (!j.contains(key))
        throw std::runtime_error("record line " + std::to_string(lineno) +
                                 " missing field '" + key + "'");
    WeightedRecord rec;
    rec.prompt_id = j["prompt"].get<std::string>();
    rec.completion = j["completion"].get<std::size_t>();
    rec.reward = j["reward"].get<double>();
    rec.weight = j["weight"].get<double>();
    rec.round = j["round"].get<std::size_t>();

    PromptFragment* frag = nullptr;
    for (auto& f : data.fragments)
      if (f.prompt_id == rec.prompt_id) frag = &f;
    if (!frag) {
      data.fragments.push_back(PromptFragment{rec.prompt_id, 0.0, 0.0, {}});
      frag = &data.fragments.back();
    }
    frag->records.push_back(std::move(rec));
  }
  // the normalizer is recoverable from the rewards through the same shifted
  // average used when the file was written
  for (auto& f : data.fragments) {
    double rmax = -core::kInf;
    for (const auto& r : f.records) rmax = std::max(rmax, r.reward);
    double acc = 0.0;
    for (const auto& r : f.records) acc += std::exp((r.reward - rmax) / beta);
    f.log_zhat = rmax / beta + std::log(acc / double(f.records.size()));
    f.zhat = std::exp(f.log_zhat);
  }
  return data;
}

RolloutBatch sample_rollouts_from(const PromptInstance& prompt, const Vec& sampler,
                                  std::size_t n, std::uint64_t seed, std::size_t round) {
  if (n == 0) throw std::invalid_argument("rollout count must be at least 1");
  if (sampler.size() != prompt.size())
    throw std::invalid_argument("sampler length does not match prompt '" + prompt.id +
                                "'");
  RolloutBatch batch;
  batch.prompt_id = prompt.id;
  batch.rng_seed = seed;
  batch.round = round;
  batch.samples.reserve(n);
  batch.rewards.reserve(n);
  SplitRng rng = SplitRng(seed).derive(prompt.id).derive(round);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx = std::size_t(rng.categorical(sampler));
    batch.samples.push_back(idx);
    batch.rewards.push_back(prompt.reward[idx]);
  }
  return batch;
}

RolloutBatch sample_rollouts(const PromptInstance& prompt, std::size_t n,
                             std::uint64_t seed, std::size_t round) {
  return sample_rollouts_from(prompt, prompt.reference, n, seed, round);
}

PromptFragment empirical_weights(const RolloutBatch& batch, Temperature beta) {
  if (batch.samples.empty()) throw std::invalid_argument("empty rollout batch");
  double b = beta.beta;
  double rmax = *std::max_element(batch.rewards.begin(), batch.rewards.end());
  double acc = 0.0;
  for (double r : batch.rewards) acc += std::exp((r - rmax) / b);
  PromptFragment frag;
  frag.prompt_id = batch.prompt_id;
  frag.log_zhat = rmax / b + std::log(acc / double(batch.samples.size()));
  frag.zhat = std::exp(frag.log_zhat);
  frag.records.reserve(batch.samples.size());
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    WeightedRecord rec;
    rec.prompt_id = batch.prompt_id;
    rec.completion = batch.samples[i];
    rec.reward = batch.rewards[i];
    rec.weight = std::exp(batch.rewards[i] / b - frag.log_zhat);
    rec.round = batch.round;
    frag.records.push_back(std::move(rec));
  }
  return frag;
}

WeightedDataset make_dataset(const PromptSet& prompts, std::size_t n, Temperature beta,
                             std::uint64_t seed, std::size_t round) {
  WeightedDataset data;
  data.beta = beta.beta;
  for (const auto& p : prompts.prompts)
    data.fragments.push_back(empirical_weights(sample_rollouts(p, n, seed, round), beta));
  return data;
}

Vec empirical_target(const PromptFragment& fragment, std::size_t n_completions) {
  Vec out(n_completions, 0.0);
  for (const auto& r : fragment.records) {
    if (r.completion >= n_completions)
      throw std::out_of_range("record completion index out of range");
    out[r.completion] += r.weight;
  }
  double n = double(fragment.records.size());
  for (double& v : out) v /= n;
  return out;
}

EssReport ess_population(const PromptInstance& prompt, Temperature beta) {
  auto t = boltzmann::build_target(prompt, beta);
  EssReport rep;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt.reference[i] <= 0.0) continue;
    double w = t.canonical_weight[i];
    rep.c2 += prompt.reference[i] * w * w;
    rep.w_max = std::max(rep.w_max, w);
  }
  rep.ess = 1.0 / rep.c2;  // efficiency per draw
  return rep;
}

double ess_sample(const Vec& weights) {
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    s += w;
    s2 += w * w;
  }
  if (s2 == 0.0) return 0.0;
  return s * s / s2;
}

SupportGapReport support_gap(const PromptInstance& prompt,
                             const std::vector<std::size_t>& support, Temperature beta) {
  auto t = boltzmann::build_target(prompt, beta);
  SupportGapReport rep;
  rep.conditional.assign(prompt.size(), 0.0);
  for (std::size_t idx : support) {
    if (idx >= prompt.size())
      throw std::out_of_range("support index out of range for prompt '" + prompt.id +
                              "'");
    rep.target_mass += t.target[idx];
    rep.conditional[idx] = t.target[idx];
  }
  if (rep.target_mass <= 0.0) {
    rep.gap = core::kInf;
    return rep;
  }
  for (double& v : rep.conditional) v /= rep.target_mass;
  rep.gap = beta.beta * std::log(1.0 / rep.target_mass);
  return rep;
}

std::vector<std::size_t> near_optimal_set(const PromptInstance& prompt, double gamma) {
  double cut = prompt.r_max() - gamma;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < prompt.size(); ++i)
    if (prompt.reward[i] >= cut) out.push_back(i);
  return out;
}

BoundReport coverage_bounds(double p_gamma, double n, double delta,
                            std::optional<double> m) {
  if (!(p_gamma > 0.0 && p_gamma < 1.0))
    throw std::domain_error("coverage mass 'p_gamma' must be in (0,1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::domain_error("confidence 'delta' must be in (0,1)");
  if (n < 1.0) throw std::domain_error("draw count 'n' must be at least 1");
  BoundReport rep;
  rep.name = "coverage";
  rep.inputs = {{"p_gamma", p_gamma}, {"n", n}, {"delta", delta}};
  rep.bound = bounds::formulas::coverage_miss(p_gamma, n);
  rep.values["miss_probability"] = rep.bound;
  rep.values["required_n"] = bounds::formulas::coverage_required_n(p_gamma, delta);
  rep.values["coverage_term"] = std::log(1.0 / delta) / p_gamma;
  if (m) {
    rep.inputs["m"] = *m;
    rep.values["multi_prompt_n"] =
        bounds::formulas::coverage_multiprompt_n(p_gamma, *m, delta);
  }
  return rep;
}

double passk(const Vec& policy, const std::vector<std::size_t>& success_set,
             std::size_t k) {
  if (k == 0) throw std::invalid_argument("draw count 'k' must be at least 1");
  double hit = 0.0;
  for (std::size_t idx : success_set) {
    if (idx >= policy.size()) throw std::out_of_range("success index out of range");
    hit += policy[idx];
  }
  if (hit > 1.0) hit = 1.0;
  return bounds::formulas::passk(hit, double(k));
}

BoundReport concentration_bound(ConcentrationKind kind, const bounds::Params& params) {
  const char* name = nullptr;
  switch (kind) {
    case ConcentrationKind::Bernstein: name = "bernstein_deviation"; break;
    case ConcentrationKind::SelfNormalized: name = "snis_perturbation"; break;
    case ConcentrationKind::HoeffdingPartition: name = "hoeffding_partition"; break;
    case ConcentrationKind::UniformNormalizer: name = "uniform_normalizer"; break;
    case ConcentrationKind::PlNormalizer: name = "pl_normalizer"; break;
  }
  BoundReport rep = bounds::evaluate(name, params);
  if (kind == ConcentrationKind::HoeffdingPartition && rep.bound >= 1.0)
    rep.values["vacuous"] = 1.0;
  return rep;
}

std::vector<double> neyman_allocation(const Vec& variances, const Vec& floors,
                                      double budget) {
  if (variances.size() != floors.size())
    throw std::invalid_argument("variance and floor vectors differ in length");
  double floor_sum = 0.0;
  double vmax = 0.0;
  for (std::size_t i = 0; i < floors.size(); ++i) {
    if (floors[i] < 0.0 || variances[i] < 0.0)
      throw std::invalid_argument("variances and floors must be nonnegative");
    floor_sum += floors[i];
    vmax = std::max(vmax, variances[i]);
  }
  if (floor_sum > budget + 1e-12)
    throw std::invalid_argument("allocation budget is smaller than the sum of floors");

  std::size_t n = floors.size();
  std::vector<double> out(floors.begin(), floors.end());
  if (vmax == 0.0) {
    // nothing to trade off; spend the slack evenly
    double slack = (budget - floor_sum) / double(n);
    for (double& v : out) v += slack;
    return out;
  }

  auto total = [&](double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += std::max(floors[i], lambda * std::sqrt(variances[i]));
    return s;
  };
  double lo = 0.0, hi = 1.0;
  while (total(hi) < budget) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    (total(mid) < budget ? lo : hi) = mid;
  }
  double lambda = 0.5 * (lo + hi);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::max(floors[i], lambda * std::sqrt(variances[i]));
  return out;
}

}  // namespace tiltlab::estimator

#include "tiltlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tiltlab/rng.hpp"

namespace tiltlab {

double SplitRng::normal() {
  // Box-Muller; the second variate is discarded to keep the stream positional.
  double u1 = next_unit();
  double u2 = next_unit();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

int SplitRng::categorical(const std::vector<double>& probs) {
  double u = next_unit();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::vector<double> SplitRng::simplex_point(std::size_t n) {
  std::vector<double> v(n);
  double sum = 0.0;
  for (auto& x : v) {
    double u = next_unit();
    if (u <= 0.0) u = 0x1.0p-53;
    x = -std::log(u);
    sum += x;
  }
  for (auto& x : v) x /= sum;
  return v;
}

}  // namespace tiltlab

namespace tiltlab::core {

bool is_simplex(const Vec& v, double tol) {
  if (v.empty()) return false;
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

Vec make_simplex(Vec v) {
  if (v.empty()) throw std::invalid_argument("probability vector is empty");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0)
      throw std::invalid_argument("probability entries must be finite and >= 0");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTol)
    throw std::invalid_argument("probability vector sums to " + std::to_string(sum) +
                                ", outside tolerance");
  for (auto& x : v) x /= sum;
  return v;
}

double PromptInstance::r_min() const {
  return *std::min_element(reward.begin(), reward.end());
}

double PromptInstance::r_max() const {
  return *std::max_element(reward.begin(), reward.end());
}

PromptInstance PromptInstance::make(std::string id, std::vector<std::string> completions,
                                    Vec reward, Vec reference) {
  if (completions.size() < 2)
    throw std::invalid_argument("prompt '" + id + "' needs at least 2 completions");
  if (reward.size() != completions.size() || reference.size() != completions.size())
    throw std::invalid_argument("prompt '" + id + "': reward/reference length mismatch");
  for (double r : reward)
    if (!std::isfinite(r))
      throw std::invalid_argument("prompt '" + id + "': non-finite reward");
  PromptInstance p;
  p.id = std::move(id);
  p.completions = std::move(completions);
  p.reward = std::move(reward);
  p.reference = make_simplex(std::move(reference));
  return p;
}

const Vec& TabularPolicy::at(const std::string& prompt_id) const {
  auto it = table.find(prompt_id);
  if (it == table.end())
    throw std::invalid_argument("policy has no entry for prompt '" + prompt_id + "'");
  return it->second;
}

void TabularPolicy::set(const std::string& prompt_id, Vec probs) {
  table[prompt_id] = make_simplex(std::move(probs));
}

const Vec& SoftmaxPolicy::logits_of(const std::string& prompt_id) const {
  auto it = logits.find(prompt_id);
  if (it == logits.end())
    throw std::invalid_argument("softmax policy has no entry for prompt '" + prompt_id + "'");
  return it->second;
}

TabularPolicy SoftmaxPolicy::to_tabular() const {
  TabularPolicy out;
  for (const auto& [id, l] : logits) out.table[id] = softmax(l);
  return out;
}

Temperature::Temperature(double b) : beta(b) {
  if (!(b > 0.0) || !std::isfinite(b))
    throw std::invalid_argument("temperature must be positive and finite");
}

PromptSet PromptSet::make(std::vector<PromptInstance> prompts, Vec weights) {
  if (prompts.empty()) throw std::invalid_argument("prompt set is empty");
  PromptSet s;
  if (weights.empty())
    weights.assign(prompts.size(), 1.0 / static_cast<double>(prompts.size()));
  if (weights.size() != prompts.size())
    throw std::invalid_argument("prompt weight length mismatch");
  s.prompts = std::move(prompts);
  s.prompt_weights = make_simplex(std::move(weights));
  return s;
}

const PromptInstance& PromptSet::by_id(const std::string& prompt_id) const {
  return prompts[index_of(prompt_id)];
}

std::size_t PromptSet::index_of(const std::string& prompt_id) const {
  for (std::size_t i = 0; i < prompts.size(); ++i)
    if (prompts[i].id == prompt_id) return i;
  throw std::invalid_argument("prompt set has no prompt '" + prompt_id + "'");
}

Vec softmax(const Vec& logits) {
  if (logits.empty()) throw std::invalid_argument("empty logit vector");
  double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw std::invalid_argument("non-finite logit");
  Vec out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

static void check_pair(const Vec& p, const Vec& q) {
  if (p.size() != q.size()) throw std::invalid_argument("divergence: length mismatch");
  if (!is_simplex(p) || !is_simplex(q))
    throw std::invalid_argument("divergence: non-simplex input");
}

double kl_divergence(const Vec& p, const Vec& q) {
  check_pair(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    acc += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return acc;
}

double chi_square(const Vec& p, const Vec& q) {
  check_pair(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] <= 0.0) {
      if (p[i] > 0.0) return kInf;
      continue;
    }
    double d = p[i] / q[i] - 1.0;
    acc += q[i] * d * d;
  }
  return acc;
}

double total_variation(const Vec& p, const Vec& q) {
  check_pair(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

double entropy(const Vec& p) {
  if (!is_simplex(p)) throw std::invalid_argument("entropy: non-simplex input");
  double acc = 0.0;
  for (double x : p)
    if (x > 0.0) acc -= x * std::log(x);
  return acc;
}

}  // namespace tiltlab::core

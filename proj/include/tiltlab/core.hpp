#ifndef TILTLAB_CORE_HPP
#define TILTLAB_CORE_HPP

#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace tiltlab::core {

using Vec = std::vector<double>;

inline constexpr double kSimplexTol = 1e-12;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Validates a probability vector and renormalizes it exactly once.
/// Entries must be nonnegative and sum to 1 within kSimplexTol.
Vec make_simplex(Vec v);

bool is_simplex(const Vec& v, double tol = kSimplexTol);

/// A finite completion space with rewards and a reference distribution.
struct PromptInstance {
  std::string id;
  std::vector<std::string> completions;
  Vec reward;
  Vec reference;

  std::size_t size() const { return completions.size(); }
  double r_min() const;
  double r_max() const;
  double reward_range() const { return r_max() - r_min(); }

  static PromptInstance make(std::string id, std::vector<std::string> completions,
                             Vec reward, Vec reference);
};

/// Explicit per-prompt probability vectors.
struct TabularPolicy {
  std::map<std::string, Vec> table;

  const Vec& at(const std::string& prompt_id) const;
  void set(const std::string& prompt_id, Vec probs);
};

/// Per-prompt logits; probabilities recovered by shifted-max softmax.
struct SoftmaxPolicy {
  std::map<std::string, Vec> logits;

  const Vec& logits_of(const std::string& prompt_id) const;
  TabularPolicy to_tabular() const;
};

struct Temperature {
  double beta;
  explicit Temperature(double b);
};

struct PromptSet {
  std::vector<PromptInstance> prompts;
  Vec prompt_weights;

  static PromptSet make(std::vector<PromptInstance> prompts, Vec weights = {});
  const PromptInstance& by_id(const std::string& prompt_id) const;
  std::size_t index_of(const std::string& prompt_id) const;
};

Vec softmax(const Vec& logits);

// Divergences. Absolute-continuity failures return the +inf sentinel rather
// than throwing: an infinite divergence is a meaningful value downstream.
double kl_divergence(const Vec& p, const Vec& q);
double chi_square(const Vec& p, const Vec& q);
double total_variation(const Vec& p, const Vec& q);
double entropy(const Vec& p);

}  // namespace tiltlab::core

#endif

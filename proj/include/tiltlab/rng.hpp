#ifndef TILTLAB_RNG_HPP
#define TILTLAB_RNG_HPP

#include <cstdint>
#include <string_view>
#include <vector>

namespace tiltlab {

/// Counter-based splittable generator. Streams are derived by key, never by
/// sharing state, so draws are identical regardless of scheduling order.
/// Sampling sites key themselves as (seed, prompt id, round, ...) via derive().
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : state_(mix(seed ^ kDomain)) {}

  SplitRng derive(std::uint64_t salt) const {
    return SplitRng(from_state{}, mix(state_ ^ mix(salt ^ kSaltDomain)));
  }
  SplitRng derive(std::string_view tag) const { return derive(fnv1a(tag)); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return finalize(state_);
  }

  /// uniform in [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double normal();

  /// inverse-CDF draw from an explicit probability vector
  int categorical(const std::vector<double>& probs);

  /// flat Dirichlet draw (uniform over the simplex)
  std::vector<double> simplex_point(std::size_t n);

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  struct from_state {};
  SplitRng(from_state, std::uint64_t s) : state_(s) {}

  static constexpr std::uint64_t kDomain = 0x7f4a7c15f39cc060ULL;
  static constexpr std::uint64_t kSaltDomain = 0x94d049bb133111ebULL;

  static std::uint64_t finalize(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    return finalize(x);
  }

  std::uint64_t state_;
};

}  // namespace tiltlab

#endif

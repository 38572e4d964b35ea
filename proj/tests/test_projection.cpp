#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "testutil.hpp"
#include "tiltlab/boltzmann.hpp"
#include "tiltlab/core.hpp"
#include "tiltlab/projection.hpp"
#include "tiltlab/rng.hpp"

using namespace tiltlab;
using namespace tiltlab::core;
using namespace tiltlab::projection;

TEST_CASE("induced target on hand-checked pairs") {
  auto pair = SamplerWeightPair::make("p", {0.5, 0.5}, {1.0, 0.0});
  auto induced = induced_target(pair);
  CHECK(induced.distribution[0] == doctest::Approx(1.0));
  CHECK(induced.distribution[1] == doctest::Approx(0.0));
  CHECK(induced.mean_weight == doctest::Approx(0.5));

  auto unit = SamplerWeightPair::make("p", {0.2, 0.3, 0.5}, {1.0, 1.0, 1.0});
  auto same = induced_target(unit);
  CHECK(same.distribution[0] == doctest::Approx(0.2));
  CHECK(same.distribution[1] == doctest::Approx(0.3));
  CHECK(same.distribution[2] == doctest::Approx(0.5));
  CHECK(same.mean_weight == doctest::Approx(1.0));
}

TEST_CASE("canonical exponential weights induce the tilted target") {
  SplitRng rng(8201);
  for (int trial = 0; trial < 30; ++trial) {
    auto prompt = testutil::random_prompt(rng, 3 + trial % 5, "p");
    double beta = 0.3 + rng.next_unit();
    auto star = boltzmann::build_target(prompt, Temperature{beta});
    auto pair = SamplerWeightPair::make(prompt.id, prompt.reference, star.canonical_weight);
    auto induced = induced_target(pair);
    for (std::size_t i = 0; i < prompt.size(); ++i)
      CHECK(induced.distribution[i] == doctest::Approx(star.target[i]).epsilon(1e-12));
    CHECK(induced.mean_weight == doctest::Approx(1.0).epsilon(1e-11));
  }
}

TEST_CASE("weighted cross-entropy splits into mean weight times divergence plus entropy") {
  SplitRng rng(8202);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 3 + trial % 4;
    Vec q = rng.simplex_point(n);
    Vec w(n);
    for (auto& x : w) x = 0.2 + 3.0 * rng.next_unit();
    auto pair = SamplerWeightPair::make("p", q, w);
    auto induced = induced_target(pair);
    Vec pol = rng.simplex_point(n);
    for (auto& x : pol) x = 0.8 * x + 0.2 / static_cast<double>(n);
    double lhs = weighted_cross_entropy(pair, pol);
    double rhs = induced.mean_weight *
                 (kl_divergence(induced.distribution, pol) + entropy(induced.distribution));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("matching weight on hand-checked inputs") {
  Vec w = matching_weight({0.3, 0.7}, {0.3, 0.7}, 2.5);
  CHECK(w[0] == doctest::Approx(2.5));
  CHECK(w[1] == doctest::Approx(2.5));

  // reference sampling with the two-action tilted target recovers the
  // canonical exponential weight exp(r)/Z elementwise
  auto prompt = testutil::two_action_prompt();
  auto star = boltzmann::build_target(prompt, Temperature{1.0});
  Vec canonical = matching_weight(prompt.reference, star.target, 1.0);
  CHECK(canonical[0] == doctest::Approx(star.canonical_weight[0]).epsilon(1e-13));
  CHECK(canonical[1] == doctest::Approx(star.canonical_weight[1]).epsilon(1e-13));

  // a skewed sampler picks up the extra reference-over-sampler factor
  Vec skew = matching_weight({0.9, 0.1}, star.target, 1.0);
  CHECK(skew[0] == doctest::Approx(0.8122873095888943).epsilon(1e-13));
  CHECK(skew[1] == doctest::Approx(2.689414213699951).epsilon(1e-13));
}

TEST_CASE("matching law round trip and its converse") {
  SplitRng rng(8203);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + trial % 6;
    Vec sampler = rng.simplex_point(n);
    Vec target = rng.simplex_point(n);
    for (auto& x : sampler) x = 0.9 * x + 0.1 / static_cast<double>(n);
    for (auto& x : target) x = 0.9 * x + 0.1 / static_cast<double>(n);
    sampler = make_simplex(std::move(sampler));
    target = make_simplex(std::move(target));
    double scale = 0.25 + 4.0 * rng.next_unit();
    Vec w = matching_weight(sampler, target, scale);
    auto induced = induced_target(SamplerWeightPair::make("p", sampler, w));
    for (std::size_t i = 0; i < n; ++i)
      CHECK(induced.distribution[i] == doctest::Approx(target[i]).epsilon(1e-12));
    CHECK(induced.mean_weight == doctest::Approx(scale).epsilon(1e-12));

    // nudging one weight breaks the reproduction
    std::size_t j = trial % n;
    Vec bad = w;
    bad[j] *= 1.0 + 1e-4;
    auto off = induced_target(SamplerWeightPair::make("p", sampler, bad));
    CHECK(std::abs(off.distribution[j] - target[j]) > 1e-9);
  }
}

TEST_CASE("matching weight names the offending index") {
  try {
    matching_weight({0.5, 0.5, 0.0}, {0.2, 0.3, 0.5}, 1.0);
    FAIL("expected a support error");
  } catch (const std::invalid_argument& err) {
    CHECK(std::string(err.what()).find("index 2") != std::string::npos);
  }
}

TEST_CASE("prompt-scale invariance of the induced target") {
  SplitRng rng(8204);
  Vec q = rng.simplex_point(5);
  Vec w(5);
  for (auto& x : w) x = 0.1 + rng.next_unit();
  auto base = induced_target(SamplerWeightPair::make("p", q, w));
  for (double c : {0.01, 3.0, 250.0}) {
    Vec scaled = w;
    for (auto& x : scaled) x *= c;
    auto same = induced_target(SamplerWeightPair::make("p", q, scaled));
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(same.distribution[i] == doctest::Approx(base.distribution[i]).epsilon(1e-12));
    CHECK(same.mean_weight == doctest::Approx(c * base.mean_weight).epsilon(1e-12));
  }
}

TEST_CASE("mismatch gap vanishes only for the matched weight") {
  auto prompt = testutil::two_action_prompt();
  Temperature beta{1.0};
  auto star = boltzmann::build_target(prompt, beta);

  auto matched = SamplerWeightPair::make(prompt.id, prompt.reference, star.canonical_weight);
  CHECK(mismatch_gap(matched, prompt, beta) == doctest::Approx(0.0).epsilon(1e-12));

  // weighting by the raw reward keeps only the rewarded action
  auto raw = SamplerWeightPair::make(prompt.id, prompt.reference, prompt.reward);
  auto induced = induced_target(raw);
  CHECK(induced.distribution[0] == doctest::Approx(1.0));
  double gap = mismatch_gap(raw, prompt, beta);
  CHECK(gap == doctest::Approx(0.31326168751822286).epsilon(1e-12));

  // same number through the value route
  auto set = PromptSet::make({prompt});
  auto targets = boltzmann::build_targets(set, beta);
  TabularPolicy pol;
  pol.set(prompt.id, induced.distribution);
  CHECK(gap == doctest::Approx(boltzmann::value_gap(pol, targets, set, beta)).epsilon(1e-10));
}

TEST_CASE("classic weighting rules pay a positive gap on a generic prompt") {
  SplitRng rng(8205);
  auto prompt = testutil::random_prompt(rng, 5, "p");
  Temperature beta{0.7};
  auto star = boltzmann::build_target(prompt, beta);

  double median = prompt.reward[2];
  Vec filtered(5), threshold(5), raw(5);
  for (std::size_t i = 0; i < 5; ++i) {
    filtered[i] = prompt.reward[i] > median ? 1.0 : 0.0;
    threshold[i] = prompt.reward[i] >= 0.4 ? 1.0 : 0.0;
    raw[i] = prompt.reward[i];
  }
  for (const Vec& w : {filtered, threshold, raw}) {
    auto pair = SamplerWeightPair::make(prompt.id, prompt.reference, w);
    CHECK(mismatch_gap(pair, prompt, beta) > 1e-4);
  }
  auto matched = SamplerWeightPair::make(prompt.id, prompt.reference, star.canonical_weight);
  CHECK(mismatch_gap(matched, prompt, beta) < 1e-12);
}

TEST_CASE("baseline shifts rescale weights but not the induced target") {
  SplitRng rng(8206);
  auto prompt = testutil::random_prompt(rng, 4, "p");
  Temperature beta{1.0};
  auto star = boltzmann::build_target(prompt, beta);

  auto at0 = baseline_invariance(prompt, beta, 0.0);
  CHECK(at0.matches);
  CHECK(at0.mean_weight == doctest::Approx(star.partition).epsilon(1e-12));

  auto unit = baseline_invariance(prompt, beta, beta.beta * star.log_partition);
  CHECK(unit.matches);
  CHECK(unit.mean_weight == doctest::Approx(1.0).epsilon(1e-12));

  auto odd = baseline_invariance(prompt, beta, 17.3);
  CHECK(odd.matches);
  CHECK(odd.mean_weight ==
        doctest::Approx(star.partition * std::exp(-17.3)).epsilon(1e-9));
}

TEST_CASE("capped projection leaves an already-feasible ratio alone") {
  Vec q = {0.2, 0.3, 0.5};
  Vec ratio = {1.5, 1.0, 0.8};
  double mean = 0.2 * 1.5 + 0.3 * 1.0 + 0.5 * 0.8;
  CHECK(mean == doctest::Approx(1.0));
  auto out = capped_projection(q, ratio, 2.0);
  CHECK(out.alpha == 1.0);
  CHECK(out.bias == 0.0);
  CHECK_FALSE(out.cap_active);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.capped[i] == ratio[i]);
}

TEST_CASE("capped projection on the hand-checked three-action instance") {
  Vec q = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  Vec ratio = {2.4, 0.3, 0.3};
  auto out = capped_projection(q, ratio, 1.5);
  CHECK(out.alpha == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(out.capped[0] == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(out.capped[1] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(out.capped[2] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(out.bias == doctest::Approx(0.22314355131420976).epsilon(1e-8));
  CHECK(out.cap_active);
}

TEST_CASE("capped projection beats every grid-feasible capped weight") {
  SplitRng rng(8207);
  for (int trial = 0; trial < 5; ++trial) {
    Vec q = rng.simplex_point(3);
    for (auto& x : q) x = 0.85 * x + 0.05;
    q = make_simplex(std::move(q));
    Vec ratio(3);
    for (auto& x : ratio) x = 0.1 + 3.0 * rng.next_unit();
    double mean = q[0] * ratio[0] + q[1] * ratio[1] + q[2] * ratio[2];
    for (auto& x : ratio) x /= mean;
    double top = *std::max_element(ratio.begin(), ratio.end());
    if (top <= 1.2) continue;
    double cap = 1.0 + 0.7 * (top - 1.0);
    auto out = capped_projection(q, ratio, cap);

    Vec original = {q[0] * ratio[0], q[1] * ratio[1], q[2] * ratio[2]};
    double best = kInf;
    const int grid = 101;
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        double u0 = cap * i / (grid - 1);
        double u1 = cap * j / (grid - 1);
        double u2 = (1.0 - q[0] * u0 - q[1] * u1) / q[2];
        if (u2 < 0.0 || u2 > cap) continue;
        Vec cand = {q[0] * u0, q[1] * u1, q[2] * u2};
        double s = cand[0] + cand[1] + cand[2];
        for (auto& x : cand) x /= s;
        best = std::min(best, kl_divergence(cand, original));
      }
    }
    CHECK(out.bias <= best + 1e-9);
    CHECK(best - out.bias <= 2e-2);
  }
}

TEST_CASE("capped projection rejects infeasible requests") {
  CHECK_THROWS_AS(capped_projection({0.5, 0.5}, {1.2, 0.8}, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(capped_projection({0.5, 0.5}, {1.5, 0.6}, 1.0), std::invalid_argument);
  // all mass on one rare atom: cap times support mass cannot reach one
  CHECK_THROWS_AS(capped_projection({0.1, 0.9}, {10.0, 0.0}, 1.5), std::invalid_argument);
}

TEST_CASE("sequence space encode/decode round trip and size cap") {
  auto space = SequenceSpace::from_steps({{0.5, 0.5}, {0.25, 0.75}});
  CHECK(space.size() == 4);
  CHECK(space.joint[space.encode({0, 1})] == doctest::Approx(0.375));
  for (std::size_t idx = 0; idx < space.size(); ++idx)
    CHECK(space.encode(space.decode(idx)) == idx);
  CHECK_THROWS_AS(SequenceSpace::from_steps(std::vector<Vec>(13, Vec{0.5, 0.5})),
                  std::invalid_argument);
}

TEST_CASE("unit sequence weight gives unit token coefficients") {
  auto space = SequenceSpace::from_steps({{0.3, 0.7}, {0.6, 0.4}});
  auto coeffs = token_coefficients(space, Vec(4, 1.0));
  for (const auto& row : coeffs.table)
    for (double v : row) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single-step coefficients are the weights themselves") {
  auto space = SequenceSpace::make(3, 1, {0.2, 0.3, 0.5});
  Vec w = {2.0, 1.0, 0.6};
  double mean = 0.2 * 2.0 + 0.3 * 1.0 + 0.5 * 0.6;
  for (auto& x : w) x /= mean;
  auto coeffs = token_coefficients(space, w);
  for (std::size_t a = 0; a < 3; ++a)
    CHECK(coeffs.table[0][a] == doctest::Approx(w[a]).epsilon(1e-12));
}

TEST_CASE("token coefficients reproduce the sequence-weighted loss") {
  SplitRng rng(8208);
  for (int trial = 0; trial < 4; ++trial) {
    auto space = SequenceSpace::from_steps(
        {rng.simplex_point(2), rng.simplex_point(2)});
    Vec reward(4);
    for (auto& r : reward) r = 2.0 * rng.next_unit();
    double z = 0.0;
    for (std::size_t i = 0; i < 4; ++i) z += space.joint[i] * std::exp(reward[i]);
    Vec w(4);
    for (std::size_t i = 0; i < 4; ++i) w[i] = std::exp(reward[i]) / z;
    auto coeffs = token_coefficients(space, w);
    for (int k = 0; k < 5; ++k) {
      auto policy = AutoregressivePolicy::random(2, 2, rng);
      double seq = sequence_weighted_nll(space, w, policy);
      double tok = token_weighted_nll(space, coeffs, policy);
      CHECK(seq == doctest::Approx(tok).epsilon(1e-10));
    }
  }
}

TEST_CASE("prefix-blind coefficients break the loss identity") {
  // joint uniform, reward favors agreeing tokens; per-position marginal
  // coefficients all collapse to one by symmetry
  auto space = SequenceSpace::from_steps({{0.5, 0.5}, {0.5, 0.5}});
  Vec reward = {3.0, 0.0, 0.0, 3.0};
  double z = 0.0;
  for (std::size_t i = 0; i < 4; ++i) z += space.joint[i] * std::exp(reward[i]);
  Vec w(4);
  for (std::size_t i = 0; i < 4; ++i) w[i] = std::exp(reward[i]) / z;

  auto exact = token_coefficients(space, w);
  auto blind = exact;
  for (std::size_t t = 0; t < 2; ++t) {
    // replace v_t(h, a) by its prefix average E[w | position t emits a]
    Vec marginal(2, 0.0), mass(2, 0.0);
    for (std::size_t idx = 0; idx < 4; ++idx) {
      auto tokens = space.decode(idx);
      marginal[tokens[t]] += space.joint[idx] * w[idx];
      mass[tokens[t]] += space.joint[idx];
    }
    for (auto& row : blind.table[t]) row = 0.0;
    for (std::size_t h = 0; h < blind.table[t].size() / 2; ++h)
      for (std::size_t a = 0; a < 2; ++a)
        blind.table[t][h * 2 + a] = marginal[a] / mass[a];
  }

  SplitRng rng(8209);
  auto policy = AutoregressivePolicy::random(2, 2, rng);
  double seq = sequence_weighted_nll(space, w, policy);
  CHECK(token_weighted_nll(space, exact, policy) == doctest::Approx(seq).epsilon(1e-10));
  CHECK(std::abs(token_weighted_nll(space, blind, policy) - seq) > 1e-3);
}

TEST_CASE("zero-probability prefixes are excluded from the coefficient table") {
  auto space = SequenceSpace::make(2, 2, {0.5, 0.5, 0.0, 0.0});
  auto coeffs = token_coefficients(space, {1.0, 1.0, 7.0, 9.0});
  CHECK(coeffs.defined[0][0]);
  CHECK_FALSE(coeffs.defined[0][1]);
  CHECK_FALSE(coeffs.defined[1][2]);
  CHECK_FALSE(coeffs.defined[1][3]);
}

TEST_CASE("transfer constants on hand-checked band widths") {
  auto at0 = local_transfer_constants(0.0);
  CHECK(at0.kappa == doctest::Approx(1.0));
  CHECK(at0.gamma == doctest::Approx(1.0));

  auto c = local_transfer_constants(0.2);
  CHECK(c.a_rho == doctest::Approx(0.10416666666666666).epsilon(1e-13));
  CHECK(c.b_rho == doctest::Approx(0.2604166666666666).epsilon(1e-13));
  CHECK(c.kappa == doctest::Approx(1.4069767441860466).epsilon(1e-13));
  CHECK(c.gamma == doctest::Approx(2.100556829348182).epsilon(1e-13));
  CHECK(c.kappa_valid);
  CHECK(c.gamma_valid);

  CHECK_THROWS_AS(local_transfer_constants(1.0), std::domain_error);
  CHECK_THROWS_AS(local_transfer_constants(-0.1), std::domain_error);
}

TEST_CASE("reverse divergence transfers through forward within the band") {
  SplitRng rng(8210);
  auto c = local_transfer_constants(0.2);
  int accepted = 0;
  while (accepted < 300) {
    std::size_t n = 2 + accepted % 5;
    Vec q = rng.simplex_point(n);
    for (auto& x : q) x = 0.8 * x + 0.2 / static_cast<double>(n);
    q = make_simplex(std::move(q));
    Vec p(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = q[i] * (1.0 + 0.15 * (2.0 * rng.next_unit() - 1.0));
      sum += p[i];
    }
    for (auto& x : p) x /= sum;
    double rho = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      rho = std::max(rho, std::abs(p[i] / q[i] - 1.0));
    if (rho > 0.2) continue;
    ++accepted;
    CHECK(kl_divergence(q, p) <= c.kappa * kl_divergence(p, q) + 1e-15);
  }
}

TEST_CASE("rare-action family splits the two divergences") {
  auto pair = rare_action_family(0.3);
  CHECK(pair.epsilon == doctest::Approx(1.4945338524781451e-05).epsilon(1e-12));
  CHECK(pair.forward_kl == doctest::Approx(0.35650660254830274).epsilon(1e-12));
  CHECK(pair.reverse_kl == doctest::Approx(2.722479493093585).epsilon(1e-12));

  double prev_forward = kInf, prev_reverse = 0.0;
  for (double delta : {0.3, 0.2, 0.15, 0.12}) {
    auto fam = rare_action_family(delta);
    CHECK(fam.forward_kl < prev_forward);
    CHECK(fam.reverse_kl > prev_reverse);
    prev_forward = fam.forward_kl;
    prev_reverse = fam.reverse_kl;
  }

  CHECK_THROWS_AS(rare_action_family(0.03), std::domain_error);
  CHECK_THROWS_AS(rare_action_family(0.6), std::domain_error);
}

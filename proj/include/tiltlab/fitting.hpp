#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "tiltlab/boltzmann.hpp"
#include "tiltlab/bounds.hpp"
#include "tiltlab/core.hpp"
#include "tiltlab/estimator.hpp"

// Weighted maximum likelihood on softmax-parametric tabular policies and the
// end-to-end one-shot gap decomposition with measured residuals.
namespace tiltlab::fitting {

using boltzmann::BoltzmannTarget;
using core::PromptSet;
using core::SoftmaxPolicy;
using core::TabularPolicy;
using core::Temperature;
using core::Vec;
using estimator::WeightedDataset;

enum class OptimizerKind { FullGradient, Stochastic };

struct FitConfig {
  double step_size = 0.5;
  std::size_t steps = 4000;
  std::size_t minibatch = 32;
  std::uint64_t seed = 0;
  OptimizerKind kind = OptimizerKind::FullGradient;
  std::optional<SoftmaxPolicy> init;
};

struct FitTrace {
  std::vector<double> loss;
};

struct FitResult {
  SoftmaxPolicy policy;
  FitTrace trace;
};

// Mean over prompts of mean over records of w * -log policy(completion);
// +inf sentinel when a positive-weight record lands on zero probability.
double weighted_nll(const TabularPolicy& policy, const WeightedDataset& data);
double weighted_nll(const SoftmaxPolicy& policy, const WeightedDataset& data);

// Gradient of weighted_nll in the softmax logits, same (M, N) averaging.
SoftmaxPolicy nll_gradient(const SoftmaxPolicy& policy, const WeightedDataset& data);

FitResult fit(const WeightedDataset& data, const PromptSet& prompts, const FitConfig& config);

// Prompt-averaged KL from targets to the policy.
double forward_kl(const std::vector<BoltzmannTarget>& targets, const TabularPolicy& policy,
                  const PromptSet& prompts);
// Largest relative deviation sup |target/policy - 1|.
double rho_of(const Vec& target, const Vec& policy);
double rho_of(const std::vector<BoltzmannTarget>& targets, const TabularPolicy& policy);

struct GapDecomposition {
  double approximation = 0.0;  // inf of forward KL over the class
  double delta_gen = 0.0;      // sup over the declared grid of |exact - oracle-weight loss|
  double delta_norm = 0.0;     // sup over the grid of |oracle-weight - empirical-weight loss|
  double eps_opt = 0.0;        // fitted empirical loss over the grid-and-trace minimum
  double rho = 0.0;
  double kappa = 0.0;
  double assembled = 0.0;
  double actual = 0.0;         // value gap of the fitted policy
  bool in_regime = false;      // rho < 1 with the transfer constant defined
  bool dominated = false;      // actual <= assembled, asserted only in regime
};

GapDecomposition e2e_decompose(const PromptSet& prompts, std::size_t n, Temperature beta,
                               const FitConfig& config, std::uint64_t seed);

struct CertificateParams {
  double initial_gap = 0.0;  // loss at start minus infimum
  double smoothness = 1.0;   // L
  double mu = 0.0;           // curvature constant, excess-risk branch only
  double eta = 0.1;
  double sigma2 = 0.0;
  double batch = 1.0;
  double steps = 1.0;
};

// Mean-squared-gradient and excess-risk certificates for the inner optimizer.
std::pair<BoundReport, BoundReport> optimizer_certificates(const CertificateParams& params);

// Synthetic quadratic instance with known constants, for checking the
// certificates against an observed run.
struct QuadraticRunResult {
  double mean_sq_grad = 0.0;
  double final_excess = 0.0;
};
QuadraticRunResult run_synthetic_quadratic(const CertificateParams& params,
                                           std::size_t dim, std::uint64_t seed);

}  // namespace tiltlab::fitting

#pragma once

// Dual-regularized advantage regression: Monte-Carlo advantages, batch
// normalization, regularization/advantage weights with product clipping, and
// the weighted-SFT update loop. An exact-expectation mode replaces sampling
// with full enumeration for convergence analysis.

#include <cstdint>
#include <span>
#include <vector>

#include "darlab/envs.hpp"
#include "darlab/objective.hpp"
#include "darlab/policy.hpp"
#include "darlab/trace.hpp"

namespace darlab {

struct RegConfig {
  double alpha = 0.1;
  double beta = 0.05;
  int k_shot = 4;
  double w_clip = 20.0;
  double learning_rate = 0.05;
  int steps = 200;
  int batch_prompts = 0;  // 0 = every prompt, every step
  double norm_epsilon = 1e-8;
  int updates_per_batch = 1;
  // Exact-expectation mode: weights for every response, expectation under
  // pi_t, raw advantages (no batch normalization).
  bool exact_expectation = false;
  // Pooled re-centering of already group-centered advantages; off is the
  // ablation path.
  bool recenter = true;

  void validate() const;
};

struct Sample {
  int prompt = 0;
  std::size_t response = 0;
  double reward = 0.0;
  double logp_ref = 0.0;  // log pi0(y|x)
  double logp_cur = 0.0;  // log pi_t(y|x)
};

struct AdvantageBatch {
  std::vector<Sample> samples;
  std::vector<double> raw_adv;
  std::vector<double> norm_adv;
  double mu_A = 0.0;
  double sigma_A = 0.0;
};

struct SampleWeights {
  std::vector<double> w_reg;
  std::vector<double> w_adv;
  std::vector<double> w_final;  // min(w_reg * w_adv, w_clip)
};

// Group-mean advantages; rewards hold consecutive groups of exactly k
// entries and the mean includes the sample itself.
std::vector<double> mc_advantage(std::span<const double> rewards, int k);

struct Normalized {
  std::vector<double> norm_adv;
  double mu_A = 0.0;
  double sigma_A = 0.0;  // population standard deviation
};

Normalized normalize_batch(std::span<const double> raw_adv,
                           double norm_epsilon, bool recenter = true);

// One step's batch record: group-mean advantages over consecutive groups of
// k samples, then pooled normalization.
AdvantageBatch build_advantage_batch(std::vector<Sample> samples, int k,
                                     double norm_epsilon, bool recenter = true);

// w_reg = (pi0/pit)^alpha, w_adv = exp(adv/beta); the product is clipped at
// w_clip in log space before the single exponentiation.
SampleWeights sample_weights(std::span<const Sample> samples,
                             std::span<const double> norm_adv, double alpha,
                             double beta, double w_clip);

// Weighted SFT loss -(1/N) sum w_i log pi_theta(y_i|x_i) and its exact
// gradient w.r.t. the flat logits. Weights are constants; no gradient flows
// through them.
std::pair<double, std::vector<double>> dar_loss_and_grad(
    const TabularPolicy& pitheta, std::span<const Sample> samples,
    std::span<const double> w_final);

// As above with explicit per-sample coefficients replacing the uniform 1/N
// (exact-expectation mode folds prompt weights and pi_t mass in here).
std::pair<double, std::vector<double>> dar_loss_and_grad_weighted(
    const TabularPolicy& pitheta, std::span<const Sample> samples,
    std::span<const double> w_final, std::span<const double> coeffs);

TrainResult dar_train(const Task& task, const RegConfig& config,
                      std::uint64_t seed, int eval_every = 0,
                      int snapshot_every = 0);

}  // namespace darlab

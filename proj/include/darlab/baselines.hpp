#pragma once

// The comparison algorithms sharing the task/policy substrate: the PPO family
// (clip, penalty, align, dual, dual-clip, dual-mix), DAO in both styles, RLOO,
// GRPO and best-of-n iterative SFT. PPO objectives are token-level; token
// conditionals of a flat policy come from exact prefix marginalization.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "darlab/dar.hpp"
#include "darlab/envs.hpp"
#include "darlab/policy.hpp"
#include "darlab/trace.hpp"

namespace darlab {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double kl_lambda = 0.0;     // penalty coefficient of the ppo_penalty variant
  double shaping_beta = 0.0;  // token-level reward shaping strength
  double alpha = 0.1;         // trade-off of the dual variants
  int updates_per_batch = 1;
  double missing_eos_penalty = 1.0;  // end-token tasks only

  void validate() const;
};

enum class PPOVariant { kPpo, kPpoPenalty, kPpoAlign, kDual, kDualClip, kDualMix };

std::string to_string(PPOVariant variant);
PPOVariant ppo_variant_from_string(const std::string& s);

// --- token-level machinery -------------------------------------------------

// One autoregressive position of a response: conditional probability is
// mass(num) / mass(den) over contiguous response-index ranges. For short
// end-token responses the final position is the EOS emission.
struct TokenPosition {
  std::size_t num_lo = 0, num_hi = 0;
  std::size_t den_lo = 0, den_hi = 0;
};

std::vector<TokenPosition> token_positions(const ResponseSpace& space,
                                           std::size_t response);

double range_mass(const Distribution& d, std::size_t lo, std::size_t hi);

// log conditional of one position under a distribution; EvaluationError on
// zero mass.
double cond_log_prob(const Distribution& d, const TokenPosition& pos);

// --- reward shaping ---------------------------------------------------------

// Per-token shaped rewards for one sampled response; the scalar task reward
// sits on the final position.
struct ShapedReward {
  std::vector<double> tokens;

  double total() const {
    double s = 0.0;
    for (double t : tokens) s += t;
    return s;
  }
};

// r_i = -beta * log(pitheta_i / piref_i), terminal scalar added at the end.
ShapedReward shaped_token_rewards(double reward, const ResponseSpace& space,
                                  const Distribution& dtheta,
                                  const Distribution& dref,
                                  std::size_t response, double shaping_beta);

// Dual shaping: -beta * (alpha log(pi/pi0) + (1-alpha) log(pi/pit)) per token.
ShapedReward dual_shaped_rewards(double reward, const ResponseSpace& space,
                                 const Distribution& dtheta,
                                 const Distribution& d0,
                                 const Distribution& dt, std::size_t response,
                                 double alpha, double shaping_beta);

// Forward-KL variant of the stability term:
// -beta * (alpha log(pi/pi0) + (1-alpha) (pit/pi) log(pit/pi)) per token.
ShapedReward dual_mix_shaped_rewards(double reward, const ResponseSpace& space,
                                     const Distribution& dtheta,
                                     const Distribution& d0,
                                     const Distribution& dt,
                                     std::size_t response, double alpha,
                                     double shaping_beta);

// Policy-level conveniences.
ShapedReward shaped_token_rewards(double reward, const TabularPolicy& pitheta,
                                  const TabularPolicy& piref, int prompt,
                                  std::size_t response, double shaping_beta);
ShapedReward dual_shaped_rewards(double reward, const TabularPolicy& pitheta,
                                 const TabularPolicy& pi0,
                                 const TabularPolicy& pit, int prompt,
                                 std::size_t response, double alpha,
                                 double shaping_beta);
ShapedReward dual_mix_shaped_rewards(double reward,
                                     const TabularPolicy& pitheta,
                                     const TabularPolicy& pi0,
                                     const TabularPolicy& pit, int prompt,
                                     std::size_t response, double alpha,
                                     double shaping_beta);

// --- surrogates --------------------------------------------------------------

struct TokenSample {
  int prompt = 0;
  std::size_t response = 0;
  std::vector<double> token_adv;  // fixed constants; one entry per position
  double weight = 1.0;            // term weight in the batch mean
};

// Mean over positions of min(ratio * A, clip(ratio, 1 +- eps) * A), summed
// over weighted samples; exact ascent gradient w.r.t. the flat logits of
// pitheta. Advantages are inputs and stay constant under differentiation.
std::pair<double, std::vector<double>> ppo_clip_surrogate(
    const TabularPolicy& pitheta, const TabularPolicy& pit,
    std::span<const TokenSample> samples, double clip_epsilon);

// Unclipped ratio surrogate used by the penalty-style variants.
std::pair<double, std::vector<double>> ppo_ratio_surrogate(
    const TabularPolicy& pitheta, const TabularPolicy& pit,
    std::span<const TokenSample> samples);

// Fraction of positions whose ratio falls outside [1-eps, 1+eps].
double clip_fraction(const TabularPolicy& pitheta, const TabularPolicy& pit,
                     std::span<const TokenSample> samples, double clip_epsilon);

// --- DAO ---------------------------------------------------------------------

// Score-function gradient with coefficient A - beta log(pitheta / m) where
// m = pi0^alpha pit^(1-alpha); samples drawn from pitheta.
std::vector<double> dao_reinforce_grad(const TabularPolicy& pitheta,
                                       const TabularPolicy& pi0,
                                       const TabularPolicy& pit,
                                       std::span<const Sample> samples,
                                       std::span<const double> adv,
                                       double alpha, double beta);

// Exact-expectation form, summing the whole response space per prompt.
std::vector<double> dao_reinforce_grad_exact(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, const std::vector<std::vector<double>>& adv,
    const PromptSet& prompts, double alpha, double beta);

// Importance-sampling objective over samples from pit; gradient differentiates
// both the ratio and the log term.
std::pair<double, std::vector<double>> dao_is_objective(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, std::span<const Sample> samples,
    std::span<const double> adv, double alpha, double beta);

std::pair<double, std::vector<double>> dao_is_objective_exact(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, const std::vector<std::vector<double>>& adv,
    const PromptSet& prompts, double alpha, double beta);

// --- group baselines ----------------------------------------------------------

// Leave-one-out advantages over consecutive groups of k; requires k >= 2.
std::vector<double> rloo_advantage(std::span<const double> rewards, int k);

// Group-normalized advantages (r - mean) / max(std, guard), population std.
std::vector<double> grpo_advantage(std::span<const double> rewards, int k,
                                   double epsilon_guard = 1e-8);

// --- best-of-n SFT --------------------------------------------------------------

struct BonStepResult {
  std::vector<std::size_t> selected;  // per prompt
  std::vector<double> selected_rewards;
  std::vector<std::vector<double>> group_rewards;
  double loss = 0.0;
};

// Samples n responses per prompt from pitheta, keeps the argmax-reward one
// (ties to the lowest index) and applies one unweighted SFT gradient step.
BonStepResult bon_iter_sft_step(TabularPolicy& pitheta, const Task& task,
                                int n, double learning_rate, Rng& rng);

// Training-side proxy reward: in end-token tasks a truncated response (one
// that hit max_len without EOS) pays the missing-EOS penalty.
double eos_adjusted_reward(const Task& task, int prompt, std::size_t response,
                           double missing_eos_penalty);

// --- trainers -------------------------------------------------------------------

TrainResult ppo_train(const Task& task, const RegConfig& reg,
                      const PPOConfig& ppo, PPOVariant variant,
                      std::uint64_t seed, int eval_every = 0);

enum class DaoStyle { kReinforce, kImportanceSampling };

TrainResult dao_train(const Task& task, const RegConfig& reg, DaoStyle style,
                      std::uint64_t seed, int eval_every = 0);

TrainResult rloo_train(const Task& task, const RegConfig& reg, double kl_coef,
                       std::uint64_t seed, int eval_every = 0);
TrainResult grpo_train(const Task& task, const RegConfig& reg, double kl_coef,
                       std::uint64_t seed, int eval_every = 0);
TrainResult bon_train(const Task& task, const RegConfig& reg, int n_best_of,
                      std::uint64_t seed, int eval_every = 0);

}  // namespace darlab

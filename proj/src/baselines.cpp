#include "darlab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "darlab/kl.hpp"

namespace darlab {

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("ppo.clip_epsilon must be > 0");
  if (!(kl_lambda >= 0.0)) throw ConfigError("ppo.kl_lambda must be >= 0");
  if (!(shaping_beta >= 0.0)) throw ConfigError("ppo.shaping_beta must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("ppo.alpha must lie in [0, 1]");
  }
  if (updates_per_batch < 1) {
    throw ConfigError("ppo.updates_per_batch must be >= 1");
  }
}

std::string to_string(PPOVariant variant) {
  switch (variant) {
    case PPOVariant::kPpo: return "ppo";
    case PPOVariant::kPpoPenalty: return "ppo_penalty";
    case PPOVariant::kPpoAlign: return "ppo_align";
    case PPOVariant::kDual: return "dual_ppo";
    case PPOVariant::kDualClip: return "dual_ppo_clip";
    case PPOVariant::kDualMix: return "dual_mix_ppo";
  }
  throw ParameterError("unknown ppo variant");
}

PPOVariant ppo_variant_from_string(const std::string& s) {
  if (s == "ppo") return PPOVariant::kPpo;
  if (s == "ppo_penalty") return PPOVariant::kPpoPenalty;
  if (s == "ppo_align") return PPOVariant::kPpoAlign;
  if (s == "dual_ppo") return PPOVariant::kDual;
  if (s == "dual_ppo_clip") return PPOVariant::kDualClip;
  if (s == "dual_mix_ppo") return PPOVariant::kDualMix;
  throw ConfigError("unknown ppo variant '" + s + "'");
}

std::vector<TokenPosition> token_positions(const ResponseSpace& space,
                                           std::size_t response) {
  const auto& tokens = space.response(response);
  std::vector<TokenPosition> positions;
  positions.reserve(tokens.size() + 1);
  std::vector<std::int32_t> prefix;
  prefix.reserve(tokens.size());
  for (std::int32_t t : tokens) {
    TokenPosition pos;
    const auto den = space.descendant_range(prefix);
    prefix.push_back(t);
    const auto num = space.descendant_range(prefix);
    pos.den_lo = den.first;
    pos.den_hi = den.second;
    pos.num_lo = num.first;
    pos.num_hi = num.second;
    positions.push_back(pos);
  }
  if (space.mode() == SpaceMode::kEndToken &&
      static_cast<int>(tokens.size()) < space.max_len()) {
    // Terminating here is one more autoregressive decision: the numerator is
    // exactly this response.
    TokenPosition pos;
    const auto den = space.descendant_range(prefix);
    pos.den_lo = den.first;
    pos.den_hi = den.second;
    pos.num_lo = response;
    pos.num_hi = response + 1;
    positions.push_back(pos);
  }
  return positions;
}

double range_mass(const Distribution& d, std::size_t lo, std::size_t hi) {
  double acc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) acc += d.probs[i];
  return acc;
}

double cond_log_prob(const Distribution& d, const TokenPosition& pos) {
  const double num = range_mass(d, pos.num_lo, pos.num_hi);
  const double den = range_mass(d, pos.den_lo, pos.den_hi);
  if (!(num > 0.0) || !(den > 0.0)) {
    throw EvaluationError("token conditional with zero prefix mass");
  }
  return std::log(num) - std::log(den);
}

namespace {

ShapedReward make_shaped(
    double reward, const ResponseSpace& space, std::size_t response,
    const std::function<double(const TokenPosition&)>& shaping) {
  const auto positions = token_positions(space, response);
  ShapedReward out;
  out.tokens.resize(positions.size(), 0.0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out.tokens[i] = shaping(positions[i]);
  }
  out.tokens.back() += reward;
  return out;
}

}  // namespace

ShapedReward shaped_token_rewards(double reward, const ResponseSpace& space,
                                  const Distribution& dtheta,
                                  const Distribution& dref,
                                  std::size_t response, double shaping_beta) {
  if (!(shaping_beta >= 0.0)) {
    throw ParameterError("shaped_token_rewards: shaping_beta must be >= 0");
  }
  return make_shaped(reward, space, response, [&](const TokenPosition& p) {
    if (shaping_beta == 0.0) return 0.0;
    return -shaping_beta * (cond_log_prob(dtheta, p) - cond_log_prob(dref, p));
  });
}

ShapedReward dual_shaped_rewards(double reward, const ResponseSpace& space,
                                 const Distribution& dtheta,
                                 const Distribution& d0, const Distribution& dt,
                                 std::size_t response, double alpha,
                                 double shaping_beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("dual_shaped_rewards: alpha must lie in [0, 1]");
  }
  return make_shaped(reward, space, response, [&](const TokenPosition& p) {
    if (shaping_beta == 0.0) return 0.0;
    const double lt = cond_log_prob(dtheta, p);
    return -shaping_beta * (alpha * (lt - cond_log_prob(d0, p)) +
                            (1.0 - alpha) * (lt - cond_log_prob(dt, p)));
  });
}

ShapedReward dual_mix_shaped_rewards(double reward, const ResponseSpace& space,
                                     const Distribution& dtheta,
                                     const Distribution& d0,
                                     const Distribution& dt,
                                     std::size_t response, double alpha,
                                     double shaping_beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("dual_mix_shaped_rewards: alpha must lie in [0, 1]");
  }
  return make_shaped(reward, space, response, [&](const TokenPosition& p) {
    if (shaping_beta == 0.0) return 0.0;
    const double lt = cond_log_prob(dtheta, p);
    const double forward_log = cond_log_prob(dt, p) - lt;
    return -shaping_beta * (alpha * (lt - cond_log_prob(d0, p)) +
                            (1.0 - alpha) * std::exp(forward_log) * forward_log);
  });
}

ShapedReward shaped_token_rewards(double reward, const TabularPolicy& pitheta,
                                  const TabularPolicy& piref, int prompt,
                                  std::size_t response, double shaping_beta) {
  return shaped_token_rewards(reward, pitheta.space(),
                              pitheta.distribution(prompt),
                              piref.distribution(prompt), response,
                              shaping_beta);
}

ShapedReward dual_shaped_rewards(double reward, const TabularPolicy& pitheta,
                                 const TabularPolicy& pi0,
                                 const TabularPolicy& pit, int prompt,
                                 std::size_t response, double alpha,
                                 double shaping_beta) {
  return dual_shaped_rewards(reward, pitheta.space(),
                             pitheta.distribution(prompt),
                             pi0.distribution(prompt),
                             pit.distribution(prompt), response, alpha,
                             shaping_beta);
}

ShapedReward dual_mix_shaped_rewards(double reward,
                                     const TabularPolicy& pitheta,
                                     const TabularPolicy& pi0,
                                     const TabularPolicy& pit, int prompt,
                                     std::size_t response, double alpha,
                                     double shaping_beta) {
  return dual_mix_shaped_rewards(reward, pitheta.space(),
                                 pitheta.distribution(prompt),
                                 pi0.distribution(prompt),
                                 pit.distribution(prompt), response, alpha,
                                 shaping_beta);
}

namespace {

// Shared token-surrogate evaluation. For every position the gradient of
// ratio * A w.r.t. the flat logits is
//   ratio * A * pi_r * (1[r in num]/P_num - 1[r in den]/P_den);
// coefficients accumulate in per-prompt difference arrays so each prompt
// costs O(positions + responses).
std::pair<double, std::vector<double>> token_surrogate(
    const TabularPolicy& pitheta, const TabularPolicy& pit,
    std::span<const TokenSample> samples, bool clipped, double clip_epsilon) {
  if (pitheta.mode() != PolicyMode::kFlat || pit.mode() != PolicyMode::kFlat) {
    throw ParameterError("ppo surrogates require flat policies");
  }
  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  std::vector<Distribution> dtheta(pitheta.prompt_count());
  std::vector<Distribution> dt(pitheta.prompt_count());
  std::vector<char> have(pitheta.prompt_count(), 0);
  std::vector<std::vector<double>> diff(pitheta.prompt_count());

  double objective = 0.0;
  for (const TokenSample& s : samples) {
    if (!have[s.prompt]) {
      dtheta[s.prompt] = pitheta.distribution(s.prompt);
      dt[s.prompt] = pit.distribution(s.prompt);
      diff[s.prompt].assign(n_resp + 1, 0.0);
      have[s.prompt] = 1;
    }
    const auto positions = token_positions(pitheta.space(), s.response);
    if (positions.size() != s.token_adv.size()) {
      throw ShapeError("token advantages do not match response positions");
    }
    const double inv_len = 1.0 / static_cast<double>(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const TokenPosition& pos = positions[i];
      const double log_ratio =
          cond_log_prob(dtheta[s.prompt], pos) - cond_log_prob(dt[s.prompt], pos);
      const double ratio = std::exp(log_ratio);
      if (!std::isfinite(ratio)) {
        throw EvaluationError("non-finite policy ratio in surrogate");
      }
      const double a = s.token_adv[i];
      const double unclipped = ratio * a;
      double term = unclipped;
      bool flows = true;
      if (clipped) {
        const double clamped =
            std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
        term = std::min(unclipped, clamped);
        flows = unclipped <= clamped;
      }
      objective += s.weight * inv_len * term;
      if (flows) {
        const double c = s.weight * inv_len * unclipped;
        const double pn = range_mass(dtheta[s.prompt], pos.num_lo, pos.num_hi);
        const double pd = range_mass(dtheta[s.prompt], pos.den_lo, pos.den_hi);
        auto& d = diff[s.prompt];
        d[pos.num_lo] += c / pn;
        d[pos.num_hi] -= c / pn;
        d[pos.den_lo] -= c / pd;
        d[pos.den_hi] += c / pd;
      }
    }
  }
  for (int x = 0; x < pitheta.prompt_count(); ++x) {
    if (!have[x]) continue;
    double run = 0.0;
    for (std::size_t y = 0; y < n_resp; ++y) {
      run += diff[x][y];
      grad[x * n_resp + y] += dtheta[x].probs[y] * run;
    }
  }
  return {objective, std::move(grad)};
}

}  // namespace

std::pair<double, std::vector<double>> ppo_clip_surrogate(
    const TabularPolicy& pitheta, const TabularPolicy& pit,
    std::span<const TokenSample> samples, double clip_epsilon) {
  if (!(clip_epsilon > 0.0)) {
    throw ParameterError("ppo_clip_surrogate: clip_epsilon must be > 0");
  }
  return token_surrogate(pitheta, pit, samples, true, clip_epsilon);
}

std::pair<double, std::vector<double>> ppo_ratio_surrogate(
    const TabularPolicy& pitheta, const TabularPolicy& pit,
    std::span<const TokenSample> samples) {
  return token_surrogate(pitheta, pit, samples, false, 0.0);
}

double clip_fraction(const TabularPolicy& pitheta, const TabularPolicy& pit,
                     std::span<const TokenSample> samples,
                     double clip_epsilon) {
  std::size_t total = 0, outside = 0;
  std::vector<Distribution> dtheta(pitheta.prompt_count());
  std::vector<Distribution> dt(pitheta.prompt_count());
  std::vector<char> have(pitheta.prompt_count(), 0);
  for (const TokenSample& s : samples) {
    if (!have[s.prompt]) {
      dtheta[s.prompt] = pitheta.distribution(s.prompt);
      dt[s.prompt] = pit.distribution(s.prompt);
      have[s.prompt] = 1;
    }
    for (const auto& pos : token_positions(pitheta.space(), s.response)) {
      const double ratio = std::exp(cond_log_prob(dtheta[s.prompt], pos) -
                                    cond_log_prob(dt[s.prompt], pos));
      ++total;
      if (ratio < 1.0 - clip_epsilon || ratio > 1.0 + clip_epsilon) ++outside;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(outside) / total;
}

namespace {

// log m(y) with m = pi0^alpha * pit^(1-alpha), unnormalized.
double log_mix(const Distribution& d0, const Distribution& dt, std::size_t y,
               double alpha) {
  return alpha * d0.log_probs[y] + (1.0 - alpha) * dt.log_probs[y];
}

}  // namespace

std::vector<double> dao_reinforce_grad(const TabularPolicy& pitheta,
                                       const TabularPolicy& pi0,
                                       const TabularPolicy& pit,
                                       std::span<const Sample> samples,
                                       std::span<const double> adv,
                                       double alpha, double beta) {
  if (samples.size() != adv.size()) {
    throw ShapeError("dao_reinforce_grad: samples/advantages size mismatch");
  }
  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  std::vector<Distribution> dtheta(pitheta.prompt_count());
  std::vector<Distribution> d0(pitheta.prompt_count());
  std::vector<Distribution> dt(pitheta.prompt_count());
  std::vector<char> have(pitheta.prompt_count(), 0);
  std::vector<double> mass(pitheta.prompt_count(), 0.0);

  const double inv_n = samples.empty() ? 0.0 : 1.0 / samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!have[s.prompt]) {
      dtheta[s.prompt] = pitheta.distribution(s.prompt);
      d0[s.prompt] = pi0.distribution(s.prompt);
      dt[s.prompt] = pit.distribution(s.prompt);
      have[s.prompt] = 1;
    }
    const double coef =
        adv[i] - beta * (dtheta[s.prompt].log_probs[s.response] -
                         log_mix(d0[s.prompt], dt[s.prompt], s.response, alpha));
    grad[s.prompt * n_resp + s.response] += inv_n * coef;
    mass[s.prompt] += inv_n * coef;
  }
  for (int x = 0; x < pitheta.prompt_count(); ++x) {
    if (!have[x] || mass[x] == 0.0) continue;
    for (std::size_t y = 0; y < n_resp; ++y) {
      grad[x * n_resp + y] -= mass[x] * dtheta[x].probs[y];
    }
  }
  return grad;
}

std::vector<double> dao_reinforce_grad_exact(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, const std::vector<std::vector<double>>& adv,
    const PromptSet& prompts, double alpha, double beta) {
  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const int x = prompts.prompts[p];
    const double w = prompts.weights[p];
    const Distribution dtheta = pitheta.distribution(x);
    const Distribution d0 = pi0.distribution(x);
    const Distribution dt = pit.distribution(x);
    double mean_coef = 0.0;
    std::vector<double> coef(n_resp);
    for (std::size_t y = 0; y < n_resp; ++y) {
      coef[y] = adv[x][y] -
                beta * (dtheta.log_probs[y] - log_mix(d0, dt, y, alpha));
      mean_coef += dtheta.probs[y] * coef[y];
    }
    for (std::size_t y = 0; y < n_resp; ++y) {
      grad[x * n_resp + y] += w * dtheta.probs[y] * (coef[y] - mean_coef);
    }
  }
  return grad;
}

std::pair<double, std::vector<double>> dao_is_objective(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, std::span<const Sample> samples,
    std::span<const double> adv, double alpha, double beta) {
  if (samples.size() != adv.size()) {
    throw ShapeError("dao_is_objective: samples/advantages size mismatch");
  }
  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  std::vector<Distribution> dtheta(pitheta.prompt_count());
  std::vector<Distribution> d0(pitheta.prompt_count());
  std::vector<Distribution> dt(pitheta.prompt_count());
  std::vector<char> have(pitheta.prompt_count(), 0);
  std::vector<double> mass(pitheta.prompt_count(), 0.0);

  double objective = 0.0;
  const double inv_n = samples.empty() ? 0.0 : 1.0 / samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!have[s.prompt]) {
      dtheta[s.prompt] = pitheta.distribution(s.prompt);
      d0[s.prompt] = pi0.distribution(s.prompt);
      dt[s.prompt] = pit.distribution(s.prompt);
      have[s.prompt] = 1;
    }
    const double lpt = dtheta[s.prompt].log_probs[s.response];
    const double ratio = std::exp(lpt - dt[s.prompt].log_probs[s.response]);
    if (!std::isfinite(ratio)) {
      throw EvaluationError("dao_is_objective: non-finite importance ratio");
    }
    const double penalty =
        lpt - log_mix(d0[s.prompt], dt[s.prompt], s.response, alpha);
    objective += inv_n * ratio * (adv[i] - beta * penalty);
    const double c = inv_n * ratio * (adv[i] - beta * penalty - beta);
    grad[s.prompt * n_resp + s.response] += c;
    mass[s.prompt] += c;
  }
  for (int x = 0; x < pitheta.prompt_count(); ++x) {
    if (!have[x] || mass[x] == 0.0) continue;
    for (std::size_t y = 0; y < n_resp; ++y) {
      grad[x * n_resp + y] -= mass[x] * dtheta[x].probs[y];
    }
  }
  return {objective, std::move(grad)};
}

std::pair<double, std::vector<double>> dao_is_objective_exact(
    const TabularPolicy& pitheta, const TabularPolicy& pi0,
    const TabularPolicy& pit, const std::vector<std::vector<double>>& adv,
    const PromptSet& prompts, double alpha, double beta) {
  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  double objective = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const int x = prompts.prompts[p];
    const double w = prompts.weights[p];
    const Distribution dtheta = pitheta.distribution(x);
    const Distribution d0 = pi0.distribution(x);
    const Distribution dt = pit.distribution(x);
    double mass = 0.0;
    std::vector<double> point(n_resp);
    for (std::size_t y = 0; y < n_resp; ++y) {
      const double ratio = std::exp(dtheta.log_probs[y] - dt.log_probs[y]);
      const double penalty = dtheta.log_probs[y] - log_mix(d0, dt, y, alpha);
      objective += w * dt.probs[y] * ratio * (adv[x][y] - beta * penalty);
      const double c = w * dt.probs[y] * ratio * (adv[x][y] - beta * penalty - beta);
      point[y] = c;
      mass += c;
    }
    for (std::size_t y = 0; y < n_resp; ++y) {
      grad[x * n_resp + y] += point[y] - mass * dtheta.probs[y];
    }
  }
  return {objective, std::move(grad)};
}

std::vector<double> rloo_advantage(std::span<const double> rewards, int k) {
  if (k < 2) {
    throw ParameterError("rloo_advantage: k must be >= 2 (leave-one-out)");
  }
  if (rewards.empty() || rewards.size() % static_cast<std::size_t>(k) != 0) {
    throw ShapeError("rloo_advantage: rewards do not form complete groups");
  }
  std::vector<double> adv(rewards.size());
  for (std::size_t g = 0; g < rewards.size(); g += k) {
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += rewards[g + i];
    for (int i = 0; i < k; ++i) {
      adv[g + i] = rewards[g + i] - (sum - rewards[g + i]) / (k - 1);
    }
  }
  return adv;
}

std::vector<double> grpo_advantage(std::span<const double> rewards, int k,
                                   double epsilon_guard) {
  if (k < 2) throw ParameterError("grpo_advantage: k must be >= 2");
  if (rewards.empty() || rewards.size() % static_cast<std::size_t>(k) != 0) {
    throw ShapeError("grpo_advantage: rewards do not form complete groups");
  }
  std::vector<double> adv(rewards.size());
  for (std::size_t g = 0; g < rewards.size(); g += k) {
    double mean = 0.0;
    for (int i = 0; i < k; ++i) mean += rewards[g + i];
    mean /= k;
    double var = 0.0;
    for (int i = 0; i < k; ++i) {
      var += (rewards[g + i] - mean) * (rewards[g + i] - mean);
    }
    const double sd = std::max(std::sqrt(var / k), epsilon_guard);
    for (int i = 0; i < k; ++i) adv[g + i] = (rewards[g + i] - mean) / sd;
  }
  return adv;
}

double eos_adjusted_reward(const Task& task, int prompt, std::size_t response,
                           double missing_eos_penalty) {
  double r = task.rewards.proxy_reward[prompt][response];
  if (task.space->is_truncated(response)) r -= missing_eos_penalty;
  return r;
}

BonStepResult bon_iter_sft_step(TabularPolicy& pitheta, const Task& task,
                                int n, double learning_rate, Rng& rng) {
  if (n < 1) throw ParameterError("bon_iter_sft_step: n must be >= 1");
  BonStepResult result;
  const auto& proxy = task.rewards.proxy_reward;
  std::vector<Sample> samples;
  for (std::size_t p = 0; p < task.prompts.size(); ++p) {
    const int x = task.prompts.prompts[p];
    const Distribution d = pitheta.distribution(x);
    std::size_t best = 0;
    double best_reward = 0.0;
    std::vector<double> group;
    for (int i = 0; i < n; ++i) {
      const std::size_t y = rng.categorical(d.probs);
      const double r = proxy[x][y];
      group.push_back(r);
      // argmax with ties to the lowest response index
      if (i == 0 || r > best_reward || (r == best_reward && y < best)) {
        best = y;
        best_reward = r;
      }
    }
    result.selected.push_back(best);
    result.selected_rewards.push_back(best_reward);
    result.group_rewards.push_back(std::move(group));
    Sample s;
    s.prompt = x;
    s.response = best;
    s.reward = best_reward;
    samples.push_back(s);
  }
  std::vector<double> unit(samples.size(), 1.0);
  auto [loss, grad] = dar_loss_and_grad(pitheta, samples, unit);
  result.loss = loss;
  auto& params = pitheta.params();
  for (std::size_t j = 0; j < params.size(); ++j) {
    params[j] -= learning_rate * grad[j];
  }
  return result;
}

}  // namespace darlab

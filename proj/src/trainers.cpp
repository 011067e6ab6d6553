#include <algorithm>
#include <cmath>

#include "darlab/baselines.hpp"
#include "darlab/kl.hpp"

// Training loops of the baseline algorithms. All share the sampler
// discipline of dar_train: snapshot pi_t, K draws per prompt in prompt order,
// one trace row per step. The learned value model of full-scale PPO is
// replaced by the exact per-prompt expected shaped return under pi_t.

namespace darlab {

namespace {

struct PromptBatch {
  std::vector<std::size_t> indices;  // positions into the prompt set
  double weight_sum = 0.0;
};

PromptBatch active_prompts(const PromptSet& prompts, int batch_prompts,
                           int step) {
  PromptBatch batch;
  const std::size_t count = prompts.size();
  if (batch_prompts <= 0 || static_cast<std::size_t>(batch_prompts) >= count) {
    batch.indices.resize(count);
    for (std::size_t i = 0; i < count; ++i) batch.indices[i] = i;
  } else {
    const std::size_t start =
        (static_cast<std::size_t>(step) * batch_prompts) % count;
    for (int i = 0; i < batch_prompts; ++i) {
      batch.indices.push_back((start + i) % count);
    }
  }
  for (std::size_t i : batch.indices) batch.weight_sum += prompts.weights[i];
  return batch;
}

ShapedReward variant_shaping(PPOVariant variant, double reward,
                             const ResponseSpace& space,
                             const Distribution& dtheta, const Distribution& d0,
                             const Distribution& dt, std::size_t response,
                             const PPOConfig& ppo) {
  switch (variant) {
    case PPOVariant::kPpo:
    case PPOVariant::kPpoPenalty:
      return shaped_token_rewards(reward, space, dtheta, d0, response,
                                  ppo.shaping_beta);
    case PPOVariant::kPpoAlign:
      // The reference penalty is explicit in the objective; rewards carry
      // only the terminal scalar.
      return shaped_token_rewards(reward, space, dtheta, d0, response, 0.0);
    case PPOVariant::kDual:
    case PPOVariant::kDualClip:
      return dual_shaped_rewards(reward, space, dtheta, d0, dt, response,
                                 ppo.alpha, ppo.shaping_beta);
    case PPOVariant::kDualMix:
      return dual_mix_shaped_rewards(reward, space, dtheta, d0, dt, response,
                                     ppo.alpha, ppo.shaping_beta);
  }
  throw ParameterError("unknown ppo variant");
}

bool variant_uses_clip(PPOVariant variant) {
  return variant == PPOVariant::kPpo || variant == PPOVariant::kPpoAlign ||
         variant == PPOVariant::kDualClip;
}

TraceRow evaluate_step(const Task& task, const TabularPolicy& pitheta,
                       const std::vector<Distribution>& pi0_dists,
                       const TabularPolicy& pit, int step) {
  TraceRow row;
  row.step = step;
  row.expected_true_reward =
      expected_reward(pitheta, task, RewardChannel::kTrue);
  row.expected_proxy_reward =
      expected_reward(pitheta, task, RewardChannel::kProxy);
  double kl0 = 0.0, klt = 0.0;
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    const int x = task.prompts.prompts[i];
    const Distribution d = pitheta.distribution(x);
    kl0 += task.prompts.weights[i] * kl_divergence(d, pi0_dists[i]);
    klt += task.prompts.weights[i] * kl_divergence(d, pit.distribution(x));
  }
  row.kl_to_pi0 = kl0;
  row.kl_to_pit_prev = klt;
  return row;
}

void maybe_eval(const Task& task, const TabularPolicy& pitheta,
                const TraceRow& row, int step, int steps, int eval_every,
                std::vector<EvalRow>& evals) {
  if (eval_every <= 0) return;
  if ((step + 1) % eval_every != 0 && step + 1 != steps) return;
  EvalRow ev;
  ev.step = step;
  ev.win_rate_vs_pi0 =
      exact_win_rate(pitheta, task.pi0, task, RewardChannel::kTrue);
  ev.expected_true_reward = row.expected_true_reward;
  ev.expected_proxy_reward = row.expected_proxy_reward;
  evals.push_back(ev);
}

}  // namespace

TrainResult ppo_train(const Task& task, const RegConfig& reg,
                      const PPOConfig& ppo, PPOVariant variant,
                      std::uint64_t seed, int eval_every) {
  reg.validate();
  ppo.validate();
  if (task.pi0.mode() != PolicyMode::kFlat) {
    throw ParameterError("ppo_train requires a flat initialization policy");
  }
  const bool eos_penalty = task.space->mode() == SpaceMode::kEndToken;

  TrainResult result;
  TabularPolicy pitheta = task.pi0;
  TabularPolicy pit = pitheta;
  Rng rng(seed);

  const std::size_t n_resp = task.space->size();
  std::vector<Distribution> pi0_dists(task.prompts.size());
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    pi0_dists[i] = task.pi0.distribution(task.prompts.prompts[i]);
  }

  for (int step = 0; step < reg.steps; ++step) {
    pit = pitheta;
    const PromptBatch batch =
        active_prompts(task.prompts, reg.batch_prompts, step);
    std::vector<Distribution> pit_dists(task.prompts.size());
    for (std::size_t i : batch.indices) {
      pit_dists[i] = pit.distribution(task.prompts.prompts[i]);
    }

    // Rollout: K responses per prompt from pi_t, in prompt order.
    std::vector<std::pair<std::size_t, std::size_t>> draws;  // (prompt idx, y)
    for (std::size_t i : batch.indices) {
      for (int k = 0; k < reg.k_shot; ++k) {
        draws.emplace_back(i, rng.categorical(pit_dists[i].probs));
      }
    }

    double objective = 0.0;
    std::vector<TokenSample> samples;
    for (int u = 0; u < ppo.updates_per_batch; ++u) {
      // Shaped returns and the exact baseline are recomputed against the
      // live policy each inner update.
      samples.clear();
      std::vector<Distribution> dtheta(task.prompts.size());
      std::vector<double> baseline(task.prompts.size(), 0.0);
      std::vector<std::vector<double>> shaped_total(task.prompts.size());
      for (std::size_t i : batch.indices) {
        const int x = task.prompts.prompts[i];
        dtheta[i] = pitheta.distribution(x);
        shaped_total[i].resize(n_resp);
        for (std::size_t y = 0; y < n_resp; ++y) {
          const double r = eos_penalty
                                   ? eos_adjusted_reward(task, x, y,
                                                         ppo.missing_eos_penalty)
                                   : task.rewards.proxy_reward[x][y];
          shaped_total[i][y] = variant_shaping(variant, r, *task.space,
                                               dtheta[i], pi0_dists[i],
                                               pit_dists[i], y, ppo)
                                   .total();
          baseline[i] += pit_dists[i].probs[y] * shaped_total[i][y];
        }
      }
      for (const auto& [i, y] : draws) {
        const int x = task.prompts.prompts[i];
        TokenSample s;
        s.prompt = x;
        s.response = y;
        const double adv = shaped_total[i][y] - baseline[i];
        s.token_adv.assign(token_positions(*task.space, y).size(), adv);
        s.weight = task.prompts.weights[i] /
                   (batch.weight_sum * static_cast<double>(reg.k_shot));
        samples.push_back(std::move(s));
      }

      auto [obj, grad] =
          variant_uses_clip(variant)
              ? ppo_clip_surrogate(pitheta, pit, samples, ppo.clip_epsilon)
              : ppo_ratio_surrogate(pitheta, pit, samples);

      if (variant == PPOVariant::kPpoPenalty && ppo.kl_lambda > 0.0) {
        for (std::size_t i : batch.indices) {
          const int x = task.prompts.prompts[i];
          const double w = task.prompts.weights[i] / batch.weight_sum;
          obj -= ppo.kl_lambda * w * kl_divergence(pit_dists[i], dtheta[i]);
          for (std::size_t y = 0; y < n_resp; ++y) {
            grad[x * n_resp + y] += ppo.kl_lambda * w *
                                    (pit_dists[i].probs[y] - dtheta[i].probs[y]);
          }
        }
      }
      if (variant == PPOVariant::kPpoAlign && ppo.shaping_beta > 0.0) {
        for (std::size_t i : batch.indices) {
          const int x = task.prompts.prompts[i];
          const double w = task.prompts.weights[i] / batch.weight_sum;
          const double kl = kl_divergence(dtheta[i], pi0_dists[i]);
          obj -= ppo.shaping_beta * w * kl;
          for (std::size_t y = 0; y < n_resp; ++y) {
            const double lr_y =
                dtheta[i].log_probs[y] - pi0_dists[i].log_probs[y];
            grad[x * n_resp + y] -=
                ppo.shaping_beta * w * dtheta[i].probs[y] * (lr_y - kl);
          }
        }
      }

      objective = obj;
      if (!std::isfinite(objective)) {
        throw EvaluationError("ppo_train: non-finite objective at step " +
                              std::to_string(step));
      }
      auto& params = pitheta.params();
      for (std::size_t j = 0; j < params.size(); ++j) {
        params[j] += reg.learning_rate * grad[j];
      }
    }
    pitheta.check_finite("ppo_train step " + std::to_string(step));

    TraceRow row = evaluate_step(task, pitheta, pi0_dists, pit, step);
    double mean_ratio = 0.0;
    std::size_t n_pos = 0;
    {
      std::vector<Distribution> dpost(task.prompts.size());
      std::vector<char> have(task.prompts.size(), 0);
      for (const TokenSample& s : samples) {
        std::size_t i = 0;
        for (std::size_t p = 0; p < task.prompts.size(); ++p) {
          if (task.prompts.prompts[p] == s.prompt) i = p;
        }
        if (!have[i]) {
          dpost[i] = pitheta.distribution(s.prompt);
          have[i] = 1;
        }
        for (const auto& pos : token_positions(*task.space, s.response)) {
          mean_ratio += std::exp(cond_log_prob(dpost[i], pos) -
                                 cond_log_prob(pit_dists[i], pos));
          ++n_pos;
        }
      }
    }
    row.mean_w_final = n_pos == 0 ? 1.0 : mean_ratio / n_pos;
    row.clip_fraction = clip_fraction(pitheta, pit, samples, ppo.clip_epsilon);
    row.loss = -objective;
    result.trace.push_back(row);
    maybe_eval(task, pitheta, row, step, reg.steps, eval_every, result.evals);
  }

  result.final_policy = std::move(pitheta);
  result.pit_prev = std::move(pit);
  return result;
}

TrainResult dao_train(const Task& task, const RegConfig& reg, DaoStyle style,
                      std::uint64_t seed, int eval_every) {
  reg.validate();
  TrainResult result;
  TabularPolicy pitheta = task.pi0;
  TabularPolicy pit = pitheta;
  Rng rng(seed);

  const auto& proxy = task.rewards.proxy_reward;
  std::vector<Distribution> pi0_dists(task.prompts.size());
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    pi0_dists[i] = task.pi0.distribution(task.prompts.prompts[i]);
  }

  for (int step = 0; step < reg.steps; ++step) {
    pit = pitheta;
    const PromptBatch batch =
        active_prompts(task.prompts, reg.batch_prompts, step);

    double loss = 0.0;
    if (reg.exact_expectation) {
      const AdvantageTable table = exact_advantage_table(proxy, pit);
      std::vector<double> grad;
      if (style == DaoStyle::kReinforce) {
        grad = dao_reinforce_grad_exact(pitheta, task.pi0, pit, table.values,
                                        task.prompts, reg.alpha, reg.beta);
      } else {
        auto [obj, g] = dao_is_objective_exact(pitheta, task.pi0, pit,
                                               table.values, task.prompts,
                                               reg.alpha, reg.beta);
        loss = -obj;
        grad = std::move(g);
      }
      auto& params = pitheta.params();
      for (std::size_t j = 0; j < params.size(); ++j) {
        params[j] += reg.learning_rate * grad[j];
      }
    } else {
      // Sampling policy: pi_theta itself for REINFORCE, pi_t for IS. At
      // rollout they coincide; the distinction matters to the estimator.
      std::vector<Sample> samples;
      for (std::size_t i : batch.indices) {
        const int x = task.prompts.prompts[i];
        const Distribution d = (style == DaoStyle::kReinforce ? pitheta : pit)
                                   .distribution(x);
        const Distribution dt = pit.distribution(x);
        for (int k = 0; k < reg.k_shot; ++k) {
          const std::size_t y = rng.categorical(d.probs);
          Sample s;
          s.prompt = x;
          s.response = y;
          s.reward = proxy[x][y];
          s.logp_ref = pi0_dists[i].log_probs[y];
          s.logp_cur = dt.log_probs[y];
          samples.push_back(s);
        }
      }
      const AdvantageBatch adv_batch = build_advantage_batch(
          std::move(samples), reg.k_shot, reg.norm_epsilon, reg.recenter);
      std::vector<double> grad;
      if (style == DaoStyle::kReinforce) {
        grad = dao_reinforce_grad(pitheta, task.pi0, pit, adv_batch.samples,
                                  adv_batch.norm_adv, reg.alpha, reg.beta);
      } else {
        auto [obj, g] =
            dao_is_objective(pitheta, task.pi0, pit, adv_batch.samples,
                             adv_batch.norm_adv, reg.alpha, reg.beta);
        loss = -obj;
        grad = std::move(g);
      }
      auto& params = pitheta.params();
      for (std::size_t j = 0; j < params.size(); ++j) {
        params[j] += reg.learning_rate * grad[j];
      }
    }
    pitheta.check_finite("dao_train step " + std::to_string(step));

    TraceRow row = evaluate_step(task, pitheta, pi0_dists, pit, step);
    row.mean_w_final = 1.0;
    row.clip_fraction = 0.0;
    row.loss = loss;
    result.trace.push_back(row);
    maybe_eval(task, pitheta, row, step, reg.steps, eval_every, result.evals);
  }
  result.final_policy = std::move(pitheta);
  result.pit_prev = std::move(pit);
  return result;
}

namespace {

TrainResult group_baseline_train(const Task& task, const RegConfig& reg,
                                 double kl_coef, bool grpo, std::uint64_t seed,
                                 int eval_every) {
  reg.validate();
  if (reg.k_shot < 2) {
    throw ConfigError("group-baseline training requires k_shot >= 2");
  }
  TrainResult result;
  TabularPolicy pitheta = task.pi0;
  TabularPolicy pit = pitheta;
  Rng rng(seed);

  const auto& proxy = task.rewards.proxy_reward;
  const std::size_t n_resp = task.space->size();
  std::vector<Distribution> pi0_dists(task.prompts.size());
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    pi0_dists[i] = task.pi0.distribution(task.prompts.prompts[i]);
  }

  for (int step = 0; step < reg.steps; ++step) {
    pit = pitheta;
    const PromptBatch batch =
        active_prompts(task.prompts, reg.batch_prompts, step);

    std::vector<Sample> samples;
    std::vector<double> shaped;
    for (std::size_t i : batch.indices) {
      const int x = task.prompts.prompts[i];
      const Distribution d = pit.distribution(x);
      for (int k = 0; k < reg.k_shot; ++k) {
        const std::size_t y = rng.categorical(d.probs);
        Sample s;
        s.prompt = x;
        s.response = y;
        s.reward = proxy[x][y];
        s.logp_ref = pi0_dists[i].log_probs[y];
        s.logp_cur = d.log_probs[y];
        samples.push_back(s);
        // Sequence-level KL shaping against pi0.
        shaped.push_back(s.reward - kl_coef * (s.logp_cur - s.logp_ref));
      }
    }
    const auto adv = grpo ? grpo_advantage(shaped, reg.k_shot)
                          : rloo_advantage(shaped, reg.k_shot);

    // REINFORCE ascent on samples from pi_t == pi_theta.
    std::vector<double> grad(pitheta.params().size(), 0.0);
    std::vector<Distribution> dtheta(task.prompts.size());
    std::vector<char> have(task.prompts.size(), 0);
    std::vector<double> mass(task.prompts.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j) {
      const Sample& s = samples[j];
      std::size_t i = 0;
      for (std::size_t p = 0; p < task.prompts.size(); ++p) {
        if (task.prompts.prompts[p] == s.prompt) i = p;
      }
      if (!have[i]) {
        dtheta[i] = pitheta.distribution(s.prompt);
        have[i] = 1;
      }
      grad[s.prompt * n_resp + s.response] += inv_n * adv[j];
      mass[i] += inv_n * adv[j];
    }
    for (std::size_t i = 0; i < task.prompts.size(); ++i) {
      if (!have[i] || mass[i] == 0.0) continue;
      const int x = task.prompts.prompts[i];
      for (std::size_t y = 0; y < n_resp; ++y) {
        grad[x * n_resp + y] -= mass[i] * dtheta[i].probs[y];
      }
    }
    auto& params = pitheta.params();
    for (std::size_t j = 0; j < params.size(); ++j) {
      params[j] += reg.learning_rate * grad[j];
    }
    pitheta.check_finite("group baseline step " + std::to_string(step));

    TraceRow row = evaluate_step(task, pitheta, pi0_dists, pit, step);
    row.mean_w_final = 1.0;
    row.clip_fraction = 0.0;
    row.loss = 0.0;
    result.trace.push_back(row);
    maybe_eval(task, pitheta, row, step, reg.steps, eval_every, result.evals);
  }
  result.final_policy = std::move(pitheta);
  result.pit_prev = std::move(pit);
  return result;
}

}  // namespace

TrainResult rloo_train(const Task& task, const RegConfig& reg, double kl_coef,
                       std::uint64_t seed, int eval_every) {
  return group_baseline_train(task, reg, kl_coef, false, seed, eval_every);
}

TrainResult grpo_train(const Task& task, const RegConfig& reg, double kl_coef,
                       std::uint64_t seed, int eval_every) {
  return group_baseline_train(task, reg, kl_coef, true, seed, eval_every);
}

TrainResult bon_train(const Task& task, const RegConfig& reg, int n_best_of,
                      std::uint64_t seed, int eval_every) {
  reg.validate();
  if (n_best_of < 1) throw ConfigError("bon_train: n_best_of must be >= 1");
  TrainResult result;
  TabularPolicy pitheta = task.pi0;
  TabularPolicy pit = pitheta;
  Rng rng(seed);

  std::vector<Distribution> pi0_dists(task.prompts.size());
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    pi0_dists[i] = task.pi0.distribution(task.prompts.prompts[i]);
  }

  for (int step = 0; step < reg.steps; ++step) {
    pit = pitheta;
    const BonStepResult bon =
        bon_iter_sft_step(pitheta, task, n_best_of, reg.learning_rate, rng);
    pitheta.check_finite("bon_train step " + std::to_string(step));

    TraceRow row = evaluate_step(task, pitheta, pi0_dists, pit, step);
    row.mean_w_final = 1.0;
    row.clip_fraction = 0.0;
    row.loss = bon.loss;
    result.trace.push_back(row);
    maybe_eval(task, pitheta, row, step, reg.steps, eval_every, result.evals);
  }
  result.final_policy = std::move(pitheta);
  result.pit_prev = std::move(pit);
  return result;
}

}  // namespace darlab

#include "darlab/dar.hpp"

#include <algorithm>
#include <cmath>

#include "darlab/kl.hpp"

namespace darlab {

void RegConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("reg.alpha must lie in [0, 1]");
  }
  if (!(beta > 0.0)) throw ConfigError("reg.beta must be > 0");
  if (k_shot < 1) throw ConfigError("reg.k_shot must be >= 1");
  if (!(w_clip > 0.0)) throw ConfigError("reg.w_clip must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("reg.learning_rate must be > 0");
  if (steps < 1) throw ConfigError("reg.steps must be >= 1");
  if (batch_prompts < 0) throw ConfigError("reg.batch_prompts must be >= 0");
  if (!(norm_epsilon > 0.0)) throw ConfigError("reg.norm_epsilon must be > 0");
  if (updates_per_batch < 1) {
    throw ConfigError("reg.updates_per_batch must be >= 1");
  }
}

std::vector<double> mc_advantage(std::span<const double> rewards, int k) {
  if (k < 1) throw ParameterError("mc_advantage: k must be >= 1");
  if (rewards.empty() || rewards.size() % static_cast<std::size_t>(k) != 0) {
    throw ShapeError("mc_advantage: rewards do not form complete groups of " +
                     std::to_string(k));
  }
  std::vector<double> adv(rewards.size());
  for (std::size_t g = 0; g < rewards.size(); g += k) {
    double mean = 0.0;
    for (int i = 0; i < k; ++i) mean += rewards[g + i];
    mean /= k;
    for (int i = 0; i < k; ++i) adv[g + i] = rewards[g + i] - mean;
  }
  return adv;
}

Normalized normalize_batch(std::span<const double> raw_adv, double norm_epsilon,
                           bool recenter) {
  if (raw_adv.empty()) throw ShapeError("normalize_batch: empty batch");
  if (!(norm_epsilon > 0.0)) {
    throw ParameterError("normalize_batch: norm_epsilon must be > 0");
  }
  Normalized out;
  const double n = static_cast<double>(raw_adv.size());
  for (double a : raw_adv) out.mu_A += a;
  out.mu_A /= n;
  double var = 0.0;
  for (double a : raw_adv) var += (a - out.mu_A) * (a - out.mu_A);
  out.sigma_A = std::sqrt(var / n);
  const double denom = std::max(out.sigma_A, norm_epsilon);
  out.norm_adv.resize(raw_adv.size());
  for (std::size_t i = 0; i < raw_adv.size(); ++i) {
    out.norm_adv[i] = (raw_adv[i] - (recenter ? out.mu_A : 0.0)) / denom;
  }
  return out;
}

AdvantageBatch build_advantage_batch(std::vector<Sample> samples, int k,
                                     double norm_epsilon, bool recenter) {
  AdvantageBatch batch;
  batch.samples = std::move(samples);
  std::vector<double> rewards(batch.samples.size());
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    rewards[i] = batch.samples[i].reward;
  }
  batch.raw_adv = mc_advantage(rewards, k);
  Normalized normed = normalize_batch(batch.raw_adv, norm_epsilon, recenter);
  batch.norm_adv = std::move(normed.norm_adv);
  batch.mu_A = normed.mu_A;
  batch.sigma_A = normed.sigma_A;
  return batch;
}

SampleWeights sample_weights(std::span<const Sample> samples,
                             std::span<const double> norm_adv, double alpha,
                             double beta, double w_clip) {
  if (samples.size() != norm_adv.size()) {
    throw ShapeError("sample_weights: samples/advantages size mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("sample_weights: alpha must lie in [0, 1]");
  }
  if (!(beta > 0.0)) throw ParameterError("sample_weights: beta must be > 0");
  if (!(w_clip > 0.0)) throw ParameterError("sample_weights: w_clip must be > 0");

  SampleWeights w;
  w.w_reg.resize(samples.size());
  w.w_adv.resize(samples.size());
  w.w_final.resize(samples.size());
  const double log_clip = std::log(w_clip);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    // alpha == 0 must give w_reg == 1 exactly, including for infinite
    // log-ratios, so short-circuit the multiply.
    const double log_reg =
        alpha == 0.0 ? 0.0
                     : alpha * (samples[i].logp_ref - samples[i].logp_cur);
    const double log_adv = norm_adv[i] / beta;
    if (!std::isfinite(log_reg) || !std::isfinite(log_adv)) {
      throw EvaluationError("sample_weights: non-finite log weight");
    }
    w.w_reg[i] = std::exp(log_reg);
    w.w_adv[i] = std::exp(log_adv);
    w.w_final[i] = std::exp(std::min(log_reg + log_adv, log_clip));
  }
  return w;
}

std::pair<double, std::vector<double>> dar_loss_and_grad_weighted(
    const TabularPolicy& pitheta, std::span<const Sample> samples,
    std::span<const double> w_final, std::span<const double> coeffs) {
  if (pitheta.mode() != PolicyMode::kFlat) {
    throw ParameterError("dar_loss_and_grad requires a flat policy");
  }
  if (samples.size() != w_final.size() || samples.size() != coeffs.size()) {
    throw ShapeError("dar_loss_and_grad: size mismatch");
  }
  pitheta.check_finite("dar_loss_and_grad");

  const std::size_t n_resp = pitheta.space().size();
  std::vector<double> grad(pitheta.params().size(), 0.0);
  std::vector<Distribution> dists(pitheta.prompt_count());
  std::vector<bool> have(pitheta.prompt_count(), false);

  // Per-prompt accumulation: grad contribution of one sample is
  // c * w * (pi_theta(.|x) - e_y); the pi term folds into a single scalar
  // per prompt.
  std::vector<double> prompt_mass(pitheta.prompt_count(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!have[s.prompt]) {
      dists[s.prompt] = pitheta.distribution(s.prompt);
      have[s.prompt] = true;
    }
    const double cw = coeffs[i] * w_final[i];
    loss -= cw * dists[s.prompt].log_probs[s.response];
    grad[s.prompt * n_resp + s.response] -= cw;
    prompt_mass[s.prompt] += cw;
  }
  for (int x = 0; x < pitheta.prompt_count(); ++x) {
    if (!have[x] || prompt_mass[x] == 0.0) continue;
    for (std::size_t y = 0; y < n_resp; ++y) {
      grad[x * n_resp + y] += prompt_mass[x] * dists[x].probs[y];
    }
  }
  if (!std::isfinite(loss)) {
    throw EvaluationError("dar_loss_and_grad: non-finite loss");
  }
  return {loss, std::move(grad)};
}

std::pair<double, std::vector<double>> dar_loss_and_grad(
    const TabularPolicy& pitheta, std::span<const Sample> samples,
    std::span<const double> w_final) {
  std::vector<double> coeffs(samples.size(),
                             samples.empty() ? 0.0 : 1.0 / samples.size());
  return dar_loss_and_grad_weighted(pitheta, samples, w_final, coeffs);
}

namespace {

// Prompts participating in one step. batch_prompts == 0 (or >= count) takes
// every prompt; otherwise a deterministic round-robin window.
std::vector<std::size_t> step_prompts(const PromptSet& prompts,
                                      int batch_prompts, int step) {
  const std::size_t count = prompts.size();
  if (batch_prompts <= 0 || static_cast<std::size_t>(batch_prompts) >= count) {
    std::vector<std::size_t> all(count);
    for (std::size_t i = 0; i < count; ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> window(batch_prompts);
  const std::size_t start =
      (static_cast<std::size_t>(step) * batch_prompts) % count;
  for (int i = 0; i < batch_prompts; ++i) {
    window[i] = (start + i) % count;
  }
  return window;
}

}  // namespace

TrainResult dar_train(const Task& task, const RegConfig& config,
                      std::uint64_t seed, int eval_every, int snapshot_every) {
  config.validate();
  if (task.pi0.mode() != PolicyMode::kFlat) {
    throw ParameterError("dar_train requires a flat initialization policy");
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

  result.trace.reserve(config.steps);
  for (int step = 0; step < config.steps; ++step) {
    pit = pitheta;  // snapshot before the update; w_reg always uses it

    std::vector<Sample> samples;
    std::vector<double> w_final;
    std::vector<double> coeffs;
    double mean_w = 0.0, clip_frac = 0.0;

    const auto active = step_prompts(task.prompts, config.batch_prompts, step);
    std::vector<Distribution> pit_dists(task.prompts.size());
    for (std::size_t i : active) {
      pit_dists[i] = pit.distribution(task.prompts.prompts[i]);
    }

    if (config.exact_expectation) {
      // Weights for every response, expectation under pi_t, raw advantages.
      samples.reserve(active.size() * n_resp);
      std::vector<double> raw_adv;
      raw_adv.reserve(active.size() * n_resp);
      for (std::size_t i : active) {
        const int x = task.prompts.prompts[i];
        double value = 0.0;
        for (std::size_t y = 0; y < n_resp; ++y) {
          value += pit_dists[i].probs[y] * proxy[x][y];
        }
        for (std::size_t y = 0; y < n_resp; ++y) {
          Sample s;
          s.prompt = x;
          s.response = y;
          s.reward = proxy[x][y];
          s.logp_ref = pi0_dists[i].log_probs[y];
          s.logp_cur = pit_dists[i].log_probs[y];
          samples.push_back(s);
          raw_adv.push_back(proxy[x][y] - value);
        }
      }
      const SampleWeights weights = sample_weights(
          samples, raw_adv, config.alpha, config.beta, config.w_clip);
      w_final = weights.w_final;
      coeffs.resize(samples.size());
      {
        std::size_t idx = 0;
        const double wsum_active = [&] {
          double s = 0.0;
          for (std::size_t i : active) s += task.prompts.weights[i];
          return s;
        }();
        for (std::size_t i : active) {
          const double pw = task.prompts.weights[i] / wsum_active;
          for (std::size_t y = 0; y < n_resp; ++y, ++idx) {
            coeffs[idx] = pw * pit_dists[i].probs[y];
            mean_w += coeffs[idx] * w_final[idx];
            const double raw_product = weights.w_reg[idx] * weights.w_adv[idx];
            if (raw_product > config.w_clip) clip_frac += coeffs[idx];
          }
        }
      }
    } else {
      samples.reserve(active.size() * config.k_shot);
      for (std::size_t i : active) {
        const int x = task.prompts.prompts[i];
        for (int k = 0; k < config.k_shot; ++k) {
          const std::size_t y = rng.categorical(pit_dists[i].probs);
          Sample s;
          s.prompt = x;
          s.response = y;
          s.reward = proxy[x][y];
          s.logp_ref = pi0_dists[i].log_probs[y];
          s.logp_cur = pit_dists[i].log_probs[y];
          samples.push_back(s);
        }
      }
      const AdvantageBatch batch = build_advantage_batch(
          std::move(samples), config.k_shot, config.norm_epsilon,
          config.recenter);
      samples = batch.samples;
      const SampleWeights weights = sample_weights(
          samples, batch.norm_adv, config.alpha, config.beta, config.w_clip);
      w_final = weights.w_final;
      coeffs.assign(samples.size(), 1.0 / samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        mean_w += w_final[i] / samples.size();
        if (weights.w_reg[i] * weights.w_adv[i] > config.w_clip) {
          clip_frac += 1.0 / samples.size();
        }
      }
    }

    double loss = 0.0;
    for (int u = 0; u < config.updates_per_batch; ++u) {
      auto [l, grad] =
          dar_loss_and_grad_weighted(pitheta, samples, w_final, coeffs);
      loss = l;
      if (!std::isfinite(loss)) {
        throw EvaluationError("dar_train: non-finite loss at step " +
                              std::to_string(step));
      }
      auto& params = pitheta.params();
      for (std::size_t j = 0; j < params.size(); ++j) {
        params[j] -= config.learning_rate * grad[j];
      }
    }
    pitheta.check_finite("dar_train step " + std::to_string(step));

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
    row.mean_w_final = mean_w;
    row.clip_fraction = clip_frac;
    row.loss = loss;
    result.trace.push_back(row);

    if (eval_every > 0 && ((step + 1) % eval_every == 0 ||
                           step + 1 == config.steps)) {
      EvalRow ev;
      ev.step = step;
      ev.win_rate_vs_pi0 =
          exact_win_rate(pitheta, task.pi0, task, RewardChannel::kTrue);
      ev.expected_true_reward = row.expected_true_reward;
      ev.expected_proxy_reward = row.expected_proxy_reward;
      result.evals.push_back(ev);
    }
    if (snapshot_every > 0 && (step + 1) % snapshot_every == 0) {
      result.snapshots.emplace_back(step, pitheta);
    }
  }

  result.final_policy = std::move(pitheta);
  result.pit_prev = std::move(pit);
  return result;
}

}  // namespace darlab

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "darlab/baselines.hpp"
#include "darlab/kl.hpp"
#include "darlab/objective.hpp"
#include "darlab/trace.hpp"

using namespace darlab;

namespace {

TabularPolicy flat_from_probs(const SpacePtr& space,
                              const std::vector<std::vector<double>>& probs) {
  TabularPolicy p = TabularPolicy::flat(space, static_cast<int>(probs.size()));
  for (int x = 0; x < p.prompt_count(); ++x) {
    for (std::size_t y = 0; y < space->size(); ++y) {
      p.logit(x, y) = std::log(probs[x][y]);
    }
  }
  return p;
}

TabularPolicy random_flat(Rng& rng, const SpacePtr& space, int prompts,
                          double spread = 0.8) {
  TabularPolicy p = TabularPolicy::flat(space, prompts);
  for (auto& v : p.params()) v = spread * rng.normal();
  return p;
}

// Autoregressive policy over vocab 2, len 2, with chosen conditionals:
// root P(token 0) = a, after-0 P(token 0) = b, after-1 P(token 0) = c.
TabularPolicy ar_with_conds(const SpacePtr& space, double a, double b,
                            double c) {
  TabularPolicy p = TabularPolicy::autoregressive(space, 1);
  const int tpc = space->tokens_per_context();
  const auto set_ctx = [&](std::size_t ctx, double p0) {
    p.logit(0, ctx * tpc + 0) = std::log(p0);
    p.logit(0, ctx * tpc + 1) = std::log(1.0 - p0);
  };
  set_ctx(space->context_of(std::vector<std::int32_t>{}), a);
  set_ctx(space->context_of(std::vector<std::int32_t>{0}), b);
  set_ctx(space->context_of(std::vector<std::int32_t>{1}), c);
  return p;
}

double rel_err(std::span<const double> got, std::span<const double> want) {
  double num = 0.0, den = 1.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return num / den;
}

}  // namespace

TEST_CASE("on-policy clip surrogate is the mean token advantage") {
  Rng rng(31);
  auto space = make_space(2, 2);
  const TabularPolicy p = random_flat(rng, space, 1);
  std::vector<TokenSample> samples(2);
  samples[0] = {0, 1, {0.5, -0.25}, 0.5};
  samples[1] = {0, 2, {1.0, 2.0}, 0.5};
  auto [obj, grad] = ppo_clip_surrogate(p, p, samples, 0.2);
  const double expected = 0.5 * (0.5 - 0.25) / 2.0 + 0.5 * (1.0 + 2.0) / 2.0;
  CHECK(obj == doctest::Approx(expected).epsilon(1e-13));
  (void)grad;
}

TEST_CASE("clip arithmetic caps the ratio contribution") {
  auto space = make_space(4, 1);
  const double x = 0.625 / 3.0;
  const TabularPolicy pitheta = flat_from_probs(space, {{0.375, x, x, x}});
  const TabularPolicy pit = flat_from_probs(space, {{0.25, 0.25, 0.25, 0.25}});
  std::vector<TokenSample> samples(1);
  samples[0] = {0, 0, {1.0}, 1.0};
  auto [obj, grad] = ppo_clip_surrogate(pitheta, pit, samples, 0.2);
  CHECK(obj == doctest::Approx(1.2).epsilon(1e-12));  // min(1.5, 1.2)
  // saturated against the improvement direction: no gradient flows
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("clip surrogate gradient matches finite differences") {
  Rng rng(32);
  for (int inst = 0; inst < 20; ++inst) {
    auto space = make_space(2, 2);
    TabularPolicy pitheta = random_flat(rng, space, 2, 0.6);
    const TabularPolicy pit = random_flat(rng, space, 2, 0.6);
    std::vector<TokenSample> samples;
    for (int i = 0; i < 4; ++i) {
      TokenSample s;
      s.prompt = static_cast<int>(rng.index(2));
      s.response = rng.index(space->size());
      const std::size_t len = token_positions(*space, s.response).size();
      for (std::size_t j = 0; j < len; ++j) s.token_adv.push_back(rng.normal());
      s.weight = 0.25;
      samples.push_back(std::move(s));
    }
    auto [obj, grad] = ppo_clip_surrogate(pitheta, pit, samples, 0.2);
    (void)obj;
    TabularPolicy probe = pitheta;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return ppo_clip_surrogate(probe, pit, samples, 0.2).first;
        },
        pitheta.params());
    CHECK(rel_err(grad, fd) < 1e-5);
  }
}

TEST_CASE("token shaping with zero beta leaves only the terminal scalar") {
  Rng rng(33);
  auto space = make_space(3, 2);
  const TabularPolicy p = random_flat(rng, space, 1);
  const TabularPolicy q = random_flat(rng, space, 1);
  const auto shaped = shaped_token_rewards(2.5, p, q, 0, 4, 0.0);
  REQUIRE(shaped.tokens.size() == 2);
  CHECK(shaped.tokens[0] == 0.0);
  CHECK(shaped.tokens[1] == 2.5);
}

TEST_CASE("token shaping vanishes when the policies agree") {
  Rng rng(34);
  auto space = make_space(3, 2);
  const TabularPolicy p = random_flat(rng, space, 1);
  const auto shaped = shaped_token_rewards(1.0, p, p, 0, 2, 0.7);
  CHECK(shaped.tokens[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(shaped.tokens[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("token shaping hand instance with chosen log-ratios") {
  auto space = make_space(2, 2);
  // log-ratio 0.1 at the first token of response [0,0], -0.3 at the second
  const TabularPolicy pitheta = ar_with_conds(space, 0.5, 0.5, 0.5);
  const TabularPolicy piref =
      ar_with_conds(space, 0.5 * std::exp(-0.1), 0.5 * std::exp(0.3), 0.5);
  const TabularPolicy flat_theta = flat_from_autoregressive(pitheta);
  const TabularPolicy flat_ref = flat_from_autoregressive(piref);
  const auto shaped = shaped_token_rewards(1.0, flat_theta, flat_ref, 0,
                                           space->index_of(
                                               std::vector<std::int32_t>{0, 0}),
                                           0.5);
  REQUIRE(shaped.tokens.size() == 2);
  CHECK(shaped.tokens[0] == doctest::Approx(-0.05).epsilon(1e-10));
  CHECK(shaped.tokens[1] == doctest::Approx(1.15).epsilon(1e-10));
}

TEST_CASE("dual shaping reduces to single-reference shaping at alpha one") {
  Rng rng(35);
  auto space = make_space(2, 2);
  const TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  for (std::size_t y = 0; y < space->size(); ++y) {
    const auto dual = dual_shaped_rewards(0.8, pitheta, pi0, pit, 0, y, 1.0, 0.4);
    const auto single = shaped_token_rewards(0.8, pitheta, pi0, 0, y, 0.4);
    REQUIRE(dual.tokens.size() == single.tokens.size());
    for (std::size_t i = 0; i < dual.tokens.size(); ++i) {
      CHECK(std::abs(dual.tokens[i] - single.tokens[i]) < 1e-12);
    }
  }
}

TEST_CASE("dual shaping with zero beta is the bare terminal reward") {
  Rng rng(36);
  auto space = make_space(2, 2);
  const TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  const auto dual = dual_shaped_rewards(3.0, pitheta, pi0, pit, 0, 1, 0.4, 0.0);
  for (std::size_t i = 0; i + 1 < dual.tokens.size(); ++i) {
    CHECK(dual.tokens[i] == 0.0);
  }
  CHECK(dual.tokens.back() == 3.0);
}

TEST_CASE("dual shaping is the alpha-average of the single shapings") {
  Rng rng(37);
  auto space = make_space(2, 2);
  const TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  const double beta = 0.6;
  for (std::size_t y = 0; y < space->size(); ++y) {
    const auto dual =
        dual_shaped_rewards(0.0, pitheta, pi0, pit, 0, y, 0.5, beta);
    const auto s0 = shaped_token_rewards(0.0, pitheta, pi0, 0, y, beta);
    const auto st = shaped_token_rewards(0.0, pitheta, pit, 0, y, beta);
    for (std::size_t i = 0; i < dual.tokens.size(); ++i) {
      CHECK(std::abs(dual.tokens[i] - 0.5 * (s0.tokens[i] + st.tokens[i])) <
            1e-12);
    }
  }
}

TEST_CASE("dual-mix stability term vanishes on-policy") {
  Rng rng(38);
  auto space = make_space(2, 2);
  const TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const auto mix =
      dual_mix_shaped_rewards(1.0, pitheta, pi0, pitheta, 0, 2, 0.0, 0.5);
  for (std::size_t i = 0; i + 1 < mix.tokens.size(); ++i) {
    CHECK(std::abs(mix.tokens[i]) < 1e-13);
  }
  CHECK(mix.tokens.back() == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("dual-mix reduces to single-reference shaping at alpha one") {
  Rng rng(39);
  auto space = make_space(2, 2);
  const TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  for (std::size_t y = 0; y < space->size(); ++y) {
    const auto mix =
        dual_mix_shaped_rewards(0.4, pitheta, pi0, pit, 0, y, 1.0, 0.3);
    const auto single = shaped_token_rewards(0.4, pitheta, pi0, 0, y, 0.3);
    for (std::size_t i = 0; i < mix.tokens.size(); ++i) {
      CHECK(std::abs(mix.tokens[i] - single.tokens[i]) < 1e-12);
    }
  }
}

TEST_CASE("dual-mix forward term hand instance at ratio two") {
  auto space = make_space(2, 1);
  const TabularPolicy pitheta = flat_from_probs(space, {{0.4, 0.6}});
  const TabularPolicy pit = flat_from_probs(space, {{0.8, 0.2}});
  const double alpha = 0.25, beta = 0.5;
  // pi0 = pitheta makes the alpha part vanish; ratio pit/pitheta = 2 at y=0.
  const auto mix =
      dual_mix_shaped_rewards(0.0, pitheta, pitheta, pit, 0, 0, alpha, beta);
  const double expected = -beta * (1.0 - alpha) * 2.0 * std::log(2.0);
  CHECK(mix.tokens[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dao reinforce exact gradient differentiates the dual objective") {
  Rng rng(40);
  for (int inst = 0; inst < 20; ++inst) {
    auto space = make_space(3, 1);
    TabularPolicy pitheta = random_flat(rng, space, 1);
    const TabularPolicy pi0 = random_flat(rng, space, 1);
    const TabularPolicy pit = random_flat(rng, space, 1);
    std::vector<std::vector<double>> adv(1, std::vector<double>(3));
    for (auto& v : adv[0]) v = rng.normal();
    const double alpha = rng.uniform(), beta = 0.2 + rng.uniform();
    const PromptSet prompts = PromptSet::uniform(1);
    const auto grad = dao_reinforce_grad_exact(pitheta, pi0, pit, adv, prompts,
                                               alpha, beta);
    TabularPolicy probe = pitheta;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return dual_kl_objective(probe.distribution(0), pi0.distribution(0),
                                   pit.distribution(0), adv[0], alpha, beta);
        },
        pitheta.params());
    CHECK(rel_err(grad, fd) < 1e-5);
  }
}

TEST_CASE("dao reinforce coefficient is constant at the interpolated target") {
  Rng rng(41);
  auto space = make_space(6, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  const double alpha = 0.3, beta = 0.7;
  const auto ref =
      interpolated_reference(pi0.distribution(0), pit.distribution(0), alpha);
  TabularPolicy pitheta = TabularPolicy::flat(space, 1);
  for (std::size_t y = 0; y < space->size(); ++y) {
    pitheta.logit(0, y) = ref.dist.log_probs[y];
  }
  // Coefficient -beta log(pitheta/m) equals beta log C at every response.
  const Distribution dtheta = pitheta.distribution(0);
  const Distribution d0 = pi0.distribution(0);
  const Distribution dt = pit.distribution(0);
  for (std::size_t y = 0; y < space->size(); ++y) {
    const double coef =
        -beta * (dtheta.log_probs[y] -
                 (alpha * d0.log_probs[y] + (1.0 - alpha) * dt.log_probs[y]));
    CHECK(std::abs(coef - beta * ref.log_C) < 1e-12);
  }
  // Expected centered gradient vanishes.
  std::vector<std::vector<double>> adv(1, std::vector<double>(6, 0.0));
  const auto grad = dao_reinforce_grad_exact(pitheta, pi0, pit, adv,
                                             PromptSet::uniform(1), alpha, beta);
  for (double g : grad) CHECK(std::abs(g) < 1e-10);
}

TEST_CASE("dao reinforce at beta zero is plain REINFORCE") {
  Rng rng(42);
  auto space = make_space(4, 1);
  TabularPolicy pitheta = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  std::vector<Sample> samples;
  std::vector<double> adv;
  for (int i = 0; i < 6; ++i) {
    Sample s;
    s.prompt = 0;
    s.response = rng.index(4);
    samples.push_back(s);
    adv.push_back(rng.normal());
  }
  const auto grad =
      dao_reinforce_grad(pitheta, pi0, pit, samples, adv, 0.5, 0.0);
  // Independent score-function estimate.
  const Distribution d = pitheta.distribution(0);
  std::vector<double> expected(4, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t y = 0; y < 4; ++y) {
      const double indicator = samples[i].response == y ? 1.0 : 0.0;
      expected[y] += adv[i] * (indicator - d.probs[y]) / samples.size();
    }
  }
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(grad[y] == doctest::Approx(expected[y]).epsilon(1e-12));
  }
}

TEST_CASE("dao importance sampling on-policy reduction") {
  Rng rng(43);
  auto space = make_space(5, 1);
  const TabularPolicy pit = random_flat(rng, space, 1);
  const TabularPolicy pi0 = random_flat(rng, space, 1);
  std::vector<std::vector<double>> adv(1, std::vector<double>(5));
  for (auto& v : adv[0]) v = rng.normal();
  const double alpha = 0.4, beta = 0.6;
  const auto [obj, grad] = dao_is_objective_exact(pit, pi0, pit, adv,
                                                  PromptSet::uniform(1), alpha,
                                                  beta);
  (void)grad;
  const Distribution dt = pit.distribution(0);
  double expected = 0.0;
  for (std::size_t y = 0; y < 5; ++y) expected += dt.probs[y] * adv[0][y];
  expected -= beta * alpha * kl_divergence(dt, pi0.distribution(0));
  CHECK(obj == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dao importance sampling equals the dual objective in exact mode") {
  Rng rng(44);
  for (int inst = 0; inst < 20; ++inst) {
    auto space = make_space(4, 1);
    const TabularPolicy pitheta = random_flat(rng, space, 1);
    const TabularPolicy pi0 = random_flat(rng, space, 1);
    const TabularPolicy pit = random_flat(rng, space, 1);
    std::vector<std::vector<double>> adv(1, std::vector<double>(4));
    for (auto& v : adv[0]) v = rng.normal();
    const double alpha = rng.uniform(), beta = 0.2 + rng.uniform();
    const auto [obj, grad] = dao_is_objective_exact(
        pitheta, pi0, pit, adv, PromptSet::uniform(1), alpha, beta);
    (void)grad;
    const double direct =
        dual_kl_objective(pitheta.distribution(0), pi0.distribution(0),
                          pit.distribution(0), adv[0], alpha, beta);
    CHECK(std::abs(obj - direct) < 1e-12);
  }
}

TEST_CASE("dao importance sampling gradient matches finite differences") {
  Rng rng(45);
  for (int inst = 0; inst < 20; ++inst) {
    auto space = make_space(3, 1);
    TabularPolicy pitheta = random_flat(rng, space, 1);
    const TabularPolicy pi0 = random_flat(rng, space, 1);
    const TabularPolicy pit = random_flat(rng, space, 1);
    std::vector<Sample> samples;
    std::vector<double> adv;
    for (int i = 0; i < 5; ++i) {
      Sample s;
      s.prompt = 0;
      s.response = rng.index(3);
      samples.push_back(s);
      adv.push_back(rng.normal());
    }
    const double alpha = rng.uniform(), beta = 0.2 + rng.uniform();
    const auto grad =
        dao_is_objective(pitheta, pi0, pit, samples, adv, alpha, beta).second;
    TabularPolicy probe = pitheta;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return dao_is_objective(probe, pi0, pit, samples, adv, alpha, beta)
              .first;
        },
        pitheta.params());
    CHECK(rel_err(grad, fd) < 1e-5);
  }
}

TEST_CASE("leave-one-out advantages") {
  const std::vector<double> r = {1.0, 3.0};
  const auto adv = rloo_advantage(r, 2);
  CHECK(adv[0] == doctest::Approx(-2.0));
  CHECK(adv[1] == doctest::Approx(2.0));
  const std::vector<double> c = {5.0, 5.0, 5.0};
  for (double a : rloo_advantage(c, 3)) CHECK(a == doctest::Approx(0.0));
  CHECK_THROWS_AS(rloo_advantage(std::vector<double>{1.0}, 1), ParameterError);
}

TEST_CASE("rloo is a scaled group-mean advantage") {
  Rng rng(46);
  for (int k : {2, 3, 4, 8}) {
    std::vector<double> rewards(2 * k);
    for (auto& v : rewards) v = rng.normal();
    const auto rloo = rloo_advantage(rewards, k);
    const auto mc = mc_advantage(rewards, k);
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      CHECK(std::abs(rloo[i] - (static_cast<double>(k) / (k - 1)) * mc[i]) <
            1e-12);
    }
  }
}

TEST_CASE("group-normalized advantages") {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  const auto adv = grpo_advantage(r, 3);
  const double sd = std::sqrt(2.0 / 3.0);  // population std
  CHECK(adv[0] == doctest::Approx(-1.0 / sd).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(0.0));
  CHECK(adv[2] == doctest::Approx(1.0 / sd).epsilon(1e-12));
  CHECK(adv[2] == doctest::Approx(1.2247).epsilon(1e-4));

  const std::vector<double> c = {2.0, 2.0, 2.0};
  for (double a : grpo_advantage(c, 3)) CHECK(a == 0.0);
  CHECK_THROWS_AS(grpo_advantage(std::vector<double>{1.0}, 1), ParameterError);
}

TEST_CASE("group normalization is scale invariant") {
  Rng rng(47);
  std::vector<double> rewards(6);
  for (auto& v : rewards) v = rng.normal();
  const auto a = grpo_advantage(rewards, 3);
  std::vector<double> scaled = rewards;
  for (auto& v : scaled) v *= 7.5;
  const auto b = grpo_advantage(scaled, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("best-of-n selects the argmax and degenerates gracefully") {
  const Task task = make_task(standard_bandit_spec());
  {
    TabularPolicy p = task.pi0;
    Rng rng(48);
    const auto step = bon_iter_sft_step(p, task, 1, 0.05, rng);
    REQUIRE(step.selected.size() == 1);
    CHECK(step.group_rewards[0].size() == 1);
    CHECK(step.selected_rewards[0] == step.group_rewards[0][0]);
  }
  {
    TabularPolicy p = TabularPolicy::flat(task.space, 1, -20.0);
    p.logit(0, 3) = 20.0;
    Rng rng(49);
    const auto step = bon_iter_sft_step(p, task, 4, 0.05, rng);
    CHECK(step.selected[0] == 3);
  }
  {
    TabularPolicy p = task.pi0;
    Rng rng(50);
    for (int s = 0; s < 10; ++s) {
      const auto step = bon_iter_sft_step(p, task, 4, 0.05, rng);
      for (std::size_t i = 0; i < step.selected.size(); ++i) {
        double mean = 0.0;
        for (double r : step.group_rewards[i]) mean += r;
        mean /= static_cast<double>(step.group_rewards[i].size());
        CHECK(step.selected_rewards[i] >= mean - 1e-12);
      }
    }
  }
}

TEST_CASE("dual ppo with beta zero reproduces ppo bit for bit") {
  const Task task = make_task(hackable_default_spec());
  RegConfig reg;
  reg.steps = 12;
  reg.k_shot = 4;
  PPOConfig ppo;
  ppo.shaping_beta = 0.0;
  ppo.updates_per_batch = 1;
  const TrainResult a = ppo_train(task, reg, ppo, PPOVariant::kPpo, 7);
  const TrainResult b = ppo_train(task, reg, ppo, PPOVariant::kDual, 7);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].expected_true_reward == b.trace[i].expected_true_reward);
    CHECK(a.trace[i].expected_proxy_reward == b.trace[i].expected_proxy_reward);
    CHECK(a.trace[i].kl_to_pi0 == b.trace[i].kl_to_pi0);
    CHECK(a.trace[i].kl_to_pit_prev == b.trace[i].kl_to_pit_prev);
    CHECK(a.trace[i].loss == b.trace[i].loss);
  }
  CHECK(a.final_policy.params() == b.final_policy.params());
}

TEST_CASE("token shaping telescopes to the sequence-level log-ratio") {
  Rng rng(51);
  for (SpaceMode mode : {SpaceMode::kFixedLength, SpaceMode::kEndToken}) {
    auto space = make_space(3, 2, mode);
    const TabularPolicy p = random_flat(rng, space, 1);
    const TabularPolicy q = random_flat(rng, space, 1);
    const Distribution dp = p.distribution(0);
    const Distribution dq = q.distribution(0);
    const double beta = 0.8;
    for (std::size_t y = 0; y < space->size(); ++y) {
      const auto shaped = shaped_token_rewards(0.0, *space, dp, dq, y, beta);
      const double seq = -beta * (dp.log_probs[y] - dq.log_probs[y]);
      CHECK(std::abs(shaped.total() - seq) < 1e-12);
    }
  }
}

TEST_CASE("missing-eos penalty applies only to truncated responses") {
  Task task = make_task(length_task_spec());
  for (std::size_t y = 0; y < task.space->size(); ++y) {
    const double adjusted = eos_adjusted_reward(task, 0, y, 1.0);
    const double raw = task.rewards.proxy_reward[0][y];
    if (task.space->is_truncated(y)) {
      CHECK(adjusted == doctest::Approx(raw - 1.0));
    } else {
      CHECK(adjusted == doctest::Approx(raw));
    }
  }
}

TEST_CASE("ppo variants run on the end-token task") {
  const Task task = make_task(length_task_spec());
  RegConfig reg;
  reg.steps = 4;
  PPOConfig ppo;
  ppo.shaping_beta = 0.05;
  for (PPOVariant v : {PPOVariant::kPpo, PPOVariant::kPpoPenalty,
                       PPOVariant::kPpoAlign, PPOVariant::kDual,
                       PPOVariant::kDualClip, PPOVariant::kDualMix}) {
    PPOConfig cfg = ppo;
    if (v == PPOVariant::kPpoPenalty) cfg.kl_lambda = 0.1;
    const TrainResult r = ppo_train(task, reg, cfg, v, 3);
    CHECK(r.trace.size() == 4);
    for (const auto& row : r.trace) {
      CHECK(std::isfinite(row.loss));
      CHECK(row.kl_to_pi0 >= 0.0);
    }
  }
}

TEST_CASE("trainer smoke runs stay finite") {
  const Task task = make_task(standard_bandit_spec());
  RegConfig reg;
  reg.steps = 6;
  CHECK(dao_train(task, reg, DaoStyle::kReinforce, 5).trace.size() == 6);
  CHECK(dao_train(task, reg, DaoStyle::kImportanceSampling, 5).trace.size() ==
        6);
  CHECK(rloo_train(task, reg, 0.03, 5).trace.size() == 6);
  CHECK(grpo_train(task, reg, 0.03, 5).trace.size() == 6);
  CHECK(bon_train(task, reg, 4, 5).trace.size() == 6);
}

TEST_CASE("the dual-clip variant defaults to the 0.2 ratio threshold") {
  const PPOConfig ppo;
  CHECK(ppo.clip_epsilon == 0.2);
  // and the clipped surrogate actually honors it
  auto space = make_space(4, 1);
  const double x = 0.625 / 3.0;
  const TabularPolicy pitheta = flat_from_probs(space, {{0.375, x, x, x}});
  const TabularPolicy pit = flat_from_probs(space, {{0.25, 0.25, 0.25, 0.25}});
  std::vector<TokenSample> samples(1);
  samples[0] = {0, 0, {1.0}, 1.0};
  const auto [obj, grad] =
      ppo_clip_surrogate(pitheta, pit, samples, ppo.clip_epsilon);
  (void)grad;
  CHECK(obj == doctest::Approx(1.2).epsilon(1e-12));
}

TEST_CASE("dao trainers run in exact-expectation mode") {
  const Task task = make_task(standard_bandit_spec());
  RegConfig reg;
  reg.steps = 5;
  reg.exact_expectation = true;
  for (DaoStyle style : {DaoStyle::kReinforce, DaoStyle::kImportanceSampling}) {
    const TrainResult r = dao_train(task, reg, style, 4);
    CHECK(r.trace.size() == 5);
    for (const auto& row : r.trace) CHECK(std::isfinite(row.expected_true_reward));
  }
}

TEST_CASE("the explicit reference penalty of ppo_align holds the policy") {
  const Task task = make_task(hackable_default_spec());
  RegConfig reg;
  reg.steps = 40;
  reg.learning_rate = 1.0;
  PPOConfig weak;
  weak.shaping_beta = 1e-6;
  weak.updates_per_batch = 4;
  PPOConfig strong = weak;
  strong.shaping_beta = 5.0;
  const TrainResult loose =
      ppo_train(task, reg, weak, PPOVariant::kPpoAlign, 6);
  const TrainResult anchored =
      ppo_train(task, reg, strong, PPOVariant::kPpoAlign, 6);
  CHECK(anchored.trace.back().kl_to_pi0 < loose.trace.back().kl_to_pi0);
}

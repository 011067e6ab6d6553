#include "darlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "darlab/baselines.hpp"
#include "darlab/dar.hpp"
#include "darlab/harness.hpp"
#include "darlab/kl.hpp"
#include "darlab/objective.hpp"
#include "darlab/trace.hpp"

namespace darlab {

namespace {

Distribution random_distribution(Rng& rng, std::size_t n, double spread = 1.5) {
  std::vector<double> logits(n);
  for (auto& v : logits) v = spread * rng.normal();
  return Distribution::from_logits(logits);
}

std::vector<double> random_values(Rng& rng, std::size_t n, double scale) {
  std::vector<double> out(n);
  for (auto& v : out) v = scale * rng.normal();
  return out;
}

double grad_rel_err(std::span<const double> got, std::span<const double> want) {
  double num = 0.0, den = 1.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return num / den;
}

TabularPolicy random_flat_policy(Rng& rng, const SpacePtr& space, int prompts,
                                 double spread = 1.0) {
  TabularPolicy p = TabularPolicy::flat(space, prompts);
  for (auto& v : p.params()) v = spread * rng.normal();
  return p;
}

struct Scale {
  int dual_kl_instances;
  int gibbs_instances;
  int gibbs_candidates;
  int fixed_point_instances;
  int gradient_instances;
  int generic_instances;
};

Scale scale_of(VerifyScale s) {
  if (s == VerifyScale::kFull) {
    return {500, 200, 1000, 50, 20, 50};
  }
  return {100, 40, 200, 15, 8, 15};
}

// ---- policy-core ------------------------------------------------------------

CheckResult check_dual_kl_identity(const Scale& sc) {
  CheckResult r{"policy_core/dual_kl_identity", true, 0.0, kIdentityTol, ""};
  const double alphas[] = {0.0, 0.1, 0.5, 0.9, 1.0};
  for (int inst = 0; inst < sc.dual_kl_instances; ++inst) {
    Rng rng(derive_seed(2024, inst));
    const std::size_t n = 2 + rng.index(63);
    const Distribution p = random_distribution(rng, n);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    for (double alpha : alphas) {
      const auto ref = interpolated_reference(pi0, pit, alpha);
      const double lhs = alpha * kl_divergence(p, pi0) +
                         (1.0 - alpha) * kl_divergence(p, pit);
      const double rhs = kl_divergence(p, ref.dist) - ref.log_C;
      const double gap = std::abs(lhs - rhs);
      if (gap > r.discrepancy) {
        r.discrepancy = gap;
        r.detail = "worst instance seed index " + std::to_string(inst);
      }
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_normalizer_bound(const Scale& sc) {
  CheckResult r{"policy_core/normalizer_bound", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(3101, inst));
    const std::size_t n = 2 + rng.index(30);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    const double alpha = 0.05 + 0.9 * rng.uniform();
    const auto ref = interpolated_reference(pi0, pit, alpha);
    const double c = std::exp(ref.log_C);
    if (!(c > 0.0 && c <= 1.0 + kExactTol)) {
      r.pass = false;
      r.discrepancy = std::max(r.discrepancy, c - 1.0);
      r.detail = "C outside (0,1] at instance " + std::to_string(inst);
    }
    // Distinct inputs must give C strictly below 1.
    if (c >= 1.0 - 1e-9) {
      r.pass = false;
      r.detail = "C unexpectedly 1 for distinct inputs at instance " +
                 std::to_string(inst);
    }
    const auto same = interpolated_reference(pi0, pi0, alpha);
    const double gap = std::abs(std::exp(same.log_C) - 1.0);
    r.discrepancy = std::max(r.discrepancy, gap);
    if (gap > kExactTol) r.pass = false;
  }
  return r;
}

CheckResult check_kl_properties(const Scale& sc) {
  CheckResult r{"policy_core/kl_properties", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(3202, inst));
    const std::size_t n = 2 + rng.index(30);
    const Distribution p = random_distribution(rng, n);
    const Distribution q = random_distribution(rng, n);
    const double kl = kl_divergence(p, q);
    if (kl < -kExactTol) {
      r.pass = false;
      r.discrepancy = std::max(r.discrepancy, -kl);
    }
    const double self = std::abs(kl_divergence(p, p));
    r.discrepancy = std::max(r.discrepancy, self);
    if (self > kExactTol) r.pass = false;
  }
  return r;
}

CheckResult check_ar_flat_agreement(const Scale& sc) {
  CheckResult r{"policy_core/ar_flat_agreement", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(3303, inst));
    const bool end_token = inst % 2 == 1;
    auto space = make_space(2 + static_cast<int>(rng.index(2)), 2,
                            end_token ? SpaceMode::kEndToken
                                      : SpaceMode::kFixedLength);
    TabularPolicy ar = TabularPolicy::autoregressive(space, 2);
    for (auto& v : ar.params()) v = rng.normal();
    const TabularPolicy flat = flat_from_autoregressive(ar);
    for (int x = 0; x < 2; ++x) {
      for (std::size_t y = 0; y < space->size(); ++y) {
        const double gap = std::abs(ar.log_prob(x, y) - flat.log_prob(x, y));
        r.discrepancy = std::max(r.discrepancy, gap);
      }
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_softmax_normalization(const Scale& sc) {
  CheckResult r{"policy_core/softmax_normalization", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(3404, inst));
    auto space = make_space(3, 2, inst % 2 == 0 ? SpaceMode::kFixedLength
                                                : SpaceMode::kEndToken);
    const TabularPolicy p = random_flat_policy(rng, space, 2, 2.0);
    for (int x = 0; x < 2; ++x) {
      const Distribution d = p.distribution(x);
      double sum = 0.0;
      for (double v : d.probs) sum += v;
      r.discrepancy = std::max(r.discrepancy, std::abs(sum - 1.0));
      for (std::size_t y = 0; y < d.size(); ++y) {
        r.discrepancy = std::max(
            r.discrepancy, std::abs(std::log(d.probs[y]) - d.log_probs[y]));
      }
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

// ---- objective-oracle --------------------------------------------------------

CheckResult check_gibbs_optimality(const Scale& sc) {
  CheckResult r{"objective/gibbs_optimality", true, 0.0, 1e-4, ""};
  const double alphas[] = {0.0, 0.1, 0.5, 1.0};
  const double betas[] = {0.05, 0.5, 5.0};
  double worst_gap = 0.0;
  for (int inst = 0; inst < sc.gibbs_instances; ++inst) {
    Rng rng(derive_seed(4100, inst));
    const std::size_t n = 2 + rng.index(15);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    const auto adv = random_values(rng, n, 1.0);
    const double alpha = alphas[inst % 4];
    const double beta = betas[(inst / 4) % 3];
    const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
    const double best =
        dual_kl_objective(closed.dist, pi0, pit, adv, alpha, beta);
    for (int c = 0; c < sc.gibbs_candidates; ++c) {
      const Distribution q = random_distribution(rng, n);
      const double v = dual_kl_objective(q, pi0, pit, adv, alpha, beta);
      if (v > best + 1e-9) {
        r.pass = false;
        r.detail = "candidate beat closed form at instance " +
                   std::to_string(inst);
      }
    }
    const Distribution brute = brute_force_optimal(pi0, pit, adv, alpha, beta);
    for (std::size_t y = 0; y < n; ++y) {
      worst_gap =
          std::max(worst_gap, std::abs(brute.probs[y] - closed.dist.probs[y]));
    }
  }
  r.discrepancy = worst_gap;
  if (worst_gap >= 1e-4) r.pass = false;
  return r;
}

CheckResult check_endpoint_reductions(const Scale& sc) {
  CheckResult r{"objective/endpoint_reductions", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(4200, inst));
    const std::size_t n = 2 + rng.index(14);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    const auto adv = random_values(rng, n, 1.0);
    const double beta = 0.3;
    for (double alpha : {1.0, 0.0}) {
      const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
      const Distribution& ref = alpha == 1.0 ? pi0 : pit;
      std::vector<double> direct(n);
      for (std::size_t y = 0; y < n; ++y) {
        direct[y] = ref.log_probs[y] + adv[y] / beta;
      }
      const Distribution expected = Distribution::from_logits(direct);
      for (std::size_t y = 0; y < n; ++y) {
        r.discrepancy = std::max(
            r.discrepancy, std::abs(expected.probs[y] - closed.dist.probs[y]));
      }
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_beta_monotonicity(const Scale& sc) {
  CheckResult r{"objective/beta_monotonicity", true, 0.0, 1e-12, ""};
  for (int inst = 0; inst < std::max(3, sc.generic_instances / 4); ++inst) {
    Rng rng(derive_seed(4300, inst));
    const std::size_t n = 2 + rng.index(14);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    const auto adv = random_values(rng, n, 1.0);
    const double alpha = 0.3;
    const auto ref = interpolated_reference(pi0, pit, alpha);
    double prev = std::numeric_limits<double>::infinity();
    for (double beta : {0.05, 0.1, 0.5, 1.0, 5.0, 50.0}) {
      const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
      const double kl = kl_divergence(closed.dist, ref.dist);
      if (kl > prev + 1e-12) {
        r.pass = false;
        r.discrepancy = std::max(r.discrepancy, kl - prev);
        r.detail = "KL increased along beta grid at instance " +
                   std::to_string(inst);
      }
      prev = kl;
    }
  }
  return r;
}

CheckResult check_partition_consistency(const Scale& sc) {
  CheckResult r{"objective/partition_consistency", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(4400, inst));
    const std::size_t n = 2 + rng.index(14);
    const Distribution pi0 = random_distribution(rng, n);
    const Distribution pit = random_distribution(rng, n);
    const auto adv = random_values(rng, n, 1.0);
    const double alpha = 0.4, beta = 0.2;
    const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
    std::vector<double> scores(n);
    for (std::size_t y = 0; y < n; ++y) {
      scores[y] = alpha * pi0.log_probs[y] + (1.0 - alpha) * pit.log_probs[y] +
                  adv[y] / beta;
    }
    r.discrepancy = std::max(r.discrepancy,
                             std::abs(closed.log_Z - log_sum_exp(scores)));
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_fixed_point(const Scale& sc) {
  CheckResult r{"objective/fixed_point_self_consistency", true, 0.0,
                kIdentityTol, ""};
  for (int inst = 0; inst < sc.fixed_point_instances; ++inst) {
    Rng rng(derive_seed(4500, inst));
    const std::size_t n = 2 + rng.index(14);
    const Distribution pi0 = random_distribution(rng, n);
    const auto reward = random_values(rng, n, 0.05);
    const double alpha = 0.2 + 0.7 * rng.uniform();
    const double beta = 0.5 + rng.uniform();
    const Distribution fp = fixed_point_policy(pi0, reward, alpha, beta);
    double v = 0.0;
    for (std::size_t y = 0; y < n; ++y) v += fp.probs[y] * reward[y];
    std::vector<double> adv(n);
    for (std::size_t y = 0; y < n; ++y) adv[y] = reward[y] - v;
    const auto closed = closed_form_optimal(pi0, fp, adv, alpha, beta);
    for (std::size_t y = 0; y < n; ++y) {
      r.discrepancy = std::max(r.discrepancy,
                               std::abs(closed.dist.probs[y] - fp.probs[y]));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

// ---- dar ----------------------------------------------------------------------

CheckResult check_weight_cap(const Scale& sc) {
  CheckResult r{"dar/weight_cap", true, 0.0, 0.0, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(5100, inst));
    const std::size_t n = 8;
    std::vector<Sample> samples(n);
    std::vector<double> adv(n);
    for (std::size_t i = 0; i < n; ++i) {
      samples[i].logp_ref = -3.0 * rng.uniform();
      samples[i].logp_cur = -3.0 * rng.uniform();
      adv[i] = 3.0 * rng.normal();
    }
    const double w_clip = 20.0;
    const auto w = sample_weights(samples, adv, 0.3, 0.05, w_clip);
    for (double v : w.w_final) {
      if (!(v > 0.0 && v <= w_clip + 1e-15)) {
        r.pass = false;
        r.discrepancy = std::max(r.discrepancy, v - w_clip);
      }
    }
  }
  return r;
}

CheckResult check_dar_gradient(const Scale& sc) {
  CheckResult r{"dar/gradient_check", true, 0.0, 1e-5, ""};
  for (int inst = 0; inst < sc.gradient_instances; ++inst) {
    Rng rng(derive_seed(5200, inst));
    auto space = make_space(3, 1);
    TabularPolicy policy = random_flat_policy(rng, space, 2);
    std::vector<Sample> samples;
    std::vector<double> weights;
    for (int i = 0; i < 6; ++i) {
      Sample s;
      s.prompt = static_cast<int>(rng.index(2));
      s.response = rng.index(space->size());
      samples.push_back(s);
      weights.push_back(0.2 + 2.0 * rng.uniform());
    }
    auto [loss, grad] = dar_loss_and_grad(policy, samples, weights);
    (void)loss;
    TabularPolicy probe = policy;
    const auto fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return dar_loss_and_grad(probe, samples, weights).first;
        },
        policy.params());
    r.discrepancy = std::max(r.discrepancy, grad_rel_err(grad, fd));
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_normalization_contract(const Scale& sc) {
  CheckResult r{"dar/normalization_contract", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(5300, inst));
    const std::size_t n = 4 + rng.index(28);
    const auto raw = random_values(rng, n, 2.0);
    const auto normed = normalize_batch(raw, 1e-8);
    double mu = 0.0;
    for (double v : normed.norm_adv) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : normed.norm_adv) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(n));
    r.discrepancy = std::max(r.discrepancy, std::abs(mu));
    r.discrepancy = std::max(r.discrepancy, std::abs(sd - 1.0));
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_alpha_zero_reduction(const Scale& sc) {
  CheckResult r{"dar/alpha_zero_reduction", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(5400, inst));
    auto space = make_space(4, 1);
    TabularPolicy policy = random_flat_policy(rng, space, 1);
    std::vector<Sample> samples;
    std::vector<double> adv;
    for (int i = 0; i < 5; ++i) {
      Sample s;
      s.prompt = 0;
      s.response = rng.index(space->size());
      s.logp_ref = -2.0 * rng.uniform();
      s.logp_cur = -2.0 * rng.uniform();
      samples.push_back(s);
      adv.push_back(rng.normal());
    }
    const double beta = 0.7, w_clip = 1e9;
    const auto w = sample_weights(samples, adv, 0.0, beta, w_clip);
    for (double v : w.w_reg) {
      r.discrepancy = std::max(r.discrepancy, std::abs(v - 1.0));
    }
    // Same gradient as plain exponentiated-advantage weighting.
    std::vector<double> plain(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      plain[i] = std::exp(adv[i] / beta);
    }
    auto [l1, g1] = dar_loss_and_grad(policy, samples, w.w_final);
    auto [l2, g2] = dar_loss_and_grad(policy, samples, plain);
    r.discrepancy = std::max(r.discrepancy, std::abs(l1 - l2));
    for (std::size_t j = 0; j < g1.size(); ++j) {
      r.discrepancy = std::max(r.discrepancy, std::abs(g1[j] - g2[j]));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_exact_convergence(const Scale& sc) {
  CheckResult r{"dar/exact_convergence", true, 0.0, 1e-3, ""};
  const bool full = sc.gradient_instances >= 20;
  std::vector<std::pair<double, double>> combos = {{0.1, 0.05}};
  if (full) {
    combos = {{0.1, 0.05}, {0.1, 0.5}, {0.5, 0.05}, {0.5, 0.5}};
  }
  const Task task = make_task(standard_bandit_spec());
  for (const auto& [alpha, beta] : combos) {
    RegConfig cfg;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.learning_rate = 0.05;
    cfg.steps = 2000;
    cfg.exact_expectation = true;
    cfg.updates_per_batch = 4;
    const TrainResult result = dar_train(task, cfg, 1);
    const Distribution target = fixed_point_policy(
        task.pi0.distribution(0), task.rewards.proxy_reward[0], alpha, beta);
    const double kl =
        kl_divergence(result.final_policy.distribution(0), target);
    r.discrepancy = std::max(r.discrepancy, kl);
    if (kl >= 1e-3) {
      r.pass = false;
      r.detail = "alpha=" + format_double(alpha) + " beta=" +
                 format_double(beta);
    }
  }
  return r;
}

CheckResult check_monotone_improvement(const Scale&) {
  CheckResult r{"dar/monotone_early_improvement", true, 0.0, 1e-12, ""};
  const Task task = make_task(standard_bandit_spec());
  RegConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.steps = 50;
  cfg.exact_expectation = true;
  const TrainResult result = dar_train(task, cfg, 1);
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& row : result.trace) {
    if (row.expected_true_reward < prev - 1e-12) {
      r.pass = false;
      r.discrepancy =
          std::max(r.discrepancy, prev - row.expected_true_reward);
      r.detail = "reward dropped at step " + std::to_string(row.step);
    }
    prev = row.expected_true_reward;
  }
  return r;
}

// ---- baselines -------------------------------------------------------------------

CheckResult check_baseline_gradients(const Scale& sc) {
  CheckResult r{"baselines/gradient_checks", true, 0.0, 1e-5, ""};
  for (int inst = 0; inst < sc.gradient_instances; ++inst) {
    Rng rng(derive_seed(6100, inst));
    auto space = make_space(2, 2);
    TabularPolicy pitheta = random_flat_policy(rng, space, 1, 0.7);
    TabularPolicy pit = random_flat_policy(rng, space, 1, 0.7);
    TabularPolicy pi0 = random_flat_policy(rng, space, 1, 0.7);

    // clip surrogate
    std::vector<TokenSample> tokens;
    for (int i = 0; i < 3; ++i) {
      TokenSample s;
      s.prompt = 0;
      s.response = rng.index(space->size());
      s.token_adv = random_values(rng, token_positions(*space, s.response).size(),
                                  1.0);
      s.weight = 1.0 / 3.0;
      tokens.push_back(std::move(s));
    }
    auto [obj, grad] = ppo_clip_surrogate(pitheta, pit, tokens, 0.2);
    (void)obj;
    TabularPolicy probe = pitheta;
    auto fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return ppo_clip_surrogate(probe, pit, tokens, 0.2).first;
        },
        pitheta.params());
    r.discrepancy = std::max(r.discrepancy, grad_rel_err(grad, fd));

    // dao reinforce (exact expectation) against the dual objective
    const std::size_t n = space->size();
    std::vector<std::vector<double>> adv(1);
    adv[0] = random_values(rng, n, 1.0);
    const PromptSet prompts = PromptSet::uniform(1);
    const double alpha = 0.3, beta = 0.4;
    const auto dao_grad = dao_reinforce_grad_exact(pitheta, pi0, pit, adv,
                                                   prompts, alpha, beta);
    fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return dual_kl_objective(probe.distribution(0), pi0.distribution(0),
                                   pit.distribution(0), adv[0], alpha, beta);
        },
        pitheta.params());
    r.discrepancy = std::max(r.discrepancy, grad_rel_err(dao_grad, fd));

    // dao importance sampling on fixed samples
    std::vector<Sample> samples;
    std::vector<double> sample_adv;
    for (int i = 0; i < 4; ++i) {
      Sample s;
      s.prompt = 0;
      s.response = rng.index(n);
      samples.push_back(s);
      sample_adv.push_back(rng.normal());
    }
    const auto is_grad =
        dao_is_objective(pitheta, pi0, pit, samples, sample_adv, alpha, beta)
            .second;
    fd = finite_diff_grad(
        [&](std::span<const double> theta) {
          std::copy(theta.begin(), theta.end(), probe.params().begin());
          return dao_is_objective(probe, pi0, pit, samples, sample_adv, alpha,
                                  beta)
              .first;
        },
        pitheta.params());
    r.discrepancy = std::max(r.discrepancy, grad_rel_err(is_grad, fd));
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_baseline_reductions(const Scale& sc) {
  CheckResult r{"baselines/reductions", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(6200, inst));
    auto space = make_space(2, 2);
    TabularPolicy pitheta = random_flat_policy(rng, space, 1, 0.7);
    TabularPolicy pi0 = random_flat_policy(rng, space, 1, 0.7);
    TabularPolicy pit = random_flat_policy(rng, space, 1, 0.7);
    const std::size_t y = rng.index(space->size());
    const double reward = rng.normal();
    const double beta = 0.3;

    const auto dual1 =
        dual_shaped_rewards(reward, pitheta, pi0, pit, 0, y, 1.0, beta);
    const auto single = shaped_token_rewards(reward, pitheta, pi0, 0, y, beta);
    for (std::size_t i = 0; i < dual1.tokens.size(); ++i) {
      r.discrepancy =
          std::max(r.discrepancy, std::abs(dual1.tokens[i] - single.tokens[i]));
    }
    const auto dual0 =
        dual_shaped_rewards(reward, pitheta, pi0, pit, 0, y, 0.4, 0.0);
    for (std::size_t i = 0; i + 1 < dual0.tokens.size(); ++i) {
      r.discrepancy = std::max(r.discrepancy, std::abs(dual0.tokens[i]));
    }
    r.discrepancy =
        std::max(r.discrepancy, std::abs(dual0.tokens.back() - reward));

    // clip inactive on-policy
    std::vector<TokenSample> tokens(1);
    tokens[0].prompt = 0;
    tokens[0].response = y;
    tokens[0].token_adv =
        random_values(rng, token_positions(*space, y).size(), 1.0);
    auto [clip_obj, g1] = ppo_clip_surrogate(pitheta, pitheta, tokens, 0.2);
    auto [ratio_obj, g2] = ppo_ratio_surrogate(pitheta, pitheta, tokens);
    r.discrepancy = std::max(r.discrepancy, std::abs(clip_obj - ratio_obj));
    for (std::size_t j = 0; j < g1.size(); ++j) {
      r.discrepancy = std::max(r.discrepancy, std::abs(g1[j] - g2[j]));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_telescoping(const Scale& sc) {
  CheckResult r{"baselines/telescoping", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(6300, inst));
    const bool end_token = inst % 2 == 1;
    auto space = make_space(3, 2, end_token ? SpaceMode::kEndToken
                                            : SpaceMode::kFixedLength);
    TabularPolicy pitheta = random_flat_policy(rng, space, 1, 0.8);
    TabularPolicy piref = random_flat_policy(rng, space, 1, 0.8);
    const Distribution dt = pitheta.distribution(0);
    const Distribution dr = piref.distribution(0);
    for (std::size_t y = 0; y < space->size(); ++y) {
      const double beta = 0.5;
      const auto shaped =
          shaped_token_rewards(0.0, *space, dt, dr, y, beta);
      const double seq = -beta * (dt.log_probs[y] - dr.log_probs[y]);
      r.discrepancy =
          std::max(r.discrepancy, std::abs(shaped.total() - seq));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_rloo_mc_identity(const Scale& sc) {
  CheckResult r{"baselines/rloo_mc_identity", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(6400, inst));
    const int k = 2 + static_cast<int>(rng.index(6));
    const auto rewards = random_values(rng, 3 * k, 1.0);
    const auto rloo = rloo_advantage(rewards, k);
    const auto mc = mc_advantage(rewards, k);
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      const double expected = (static_cast<double>(k) / (k - 1)) * mc[i];
      r.discrepancy = std::max(r.discrepancy, std::abs(rloo[i] - expected));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_grpo_scale_invariance(const Scale& sc) {
  CheckResult r{"baselines/grpo_scale_invariance", true, 0.0, kExactTol, ""};
  for (int inst = 0; inst < sc.generic_instances; ++inst) {
    Rng rng(derive_seed(6500, inst));
    const int k = 3;
    auto rewards = random_values(rng, 2 * k, 1.0);
    const double c = 0.5 + 4.0 * rng.uniform();
    auto scaled = rewards;
    for (auto& v : scaled) v *= c;
    const auto a = grpo_advantage(rewards, k);
    const auto b = grpo_advantage(scaled, k);
    for (std::size_t i = 0; i < a.size(); ++i) {
      r.discrepancy = std::max(r.discrepancy, std::abs(a[i] - b[i]));
    }
  }
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

// ---- envs ---------------------------------------------------------------------

CheckResult check_task_determinism(const Scale&) {
  CheckResult r{"envs/task_determinism", true, 0.0, 0.0, ""};
  for (const TaskSpec& spec : {standard_bandit_spec(), hackable_default_spec(),
                               length_task_spec()}) {
    const Task a = make_task(spec);
    const Task b = make_task(spec);
    if (a.rewards.true_reward != b.rewards.true_reward ||
        a.rewards.proxy_reward != b.rewards.proxy_reward ||
        a.pi0.params() != b.pi0.params()) {
      r.pass = false;
      r.detail = "task '" + spec.name + "' not deterministic";
    }
  }
  return r;
}

CheckResult check_win_rate_symmetry(const Scale&) {
  CheckResult r{"envs/win_rate_symmetry", true, 0.0, 0.0, ""};
  const Task task = make_task(hackable_default_spec());
  Rng rng(99);
  TabularPolicy a = random_flat_policy(rng, task.space, task.spec.prompt_count);
  TabularPolicy b = random_flat_policy(rng, task.space, task.spec.prompt_count);
  const double self = exact_win_rate(a, a, task, RewardChannel::kTrue);
  const double ab = exact_win_rate(a, b, task, RewardChannel::kTrue);
  const double ba = exact_win_rate(b, a, task, RewardChannel::kTrue);
  r.discrepancy = std::max(std::abs(self - 0.5), std::abs(ab + ba - 1.0));
  // Self-comparison is bit-exact; the complement may round in the last ulp.
  r.tolerance = 1e-15;
  r.pass = self == 0.5 && std::abs(ab + ba - 1.0) < 1e-15;
  return r;
}

CheckResult check_hackable_argmax(const Scale&) {
  CheckResult r{"envs/hackable_argmax", true, 0.0, 0.0, ""};
  for (std::uint64_t seed : {11ULL, 1ULL, 2ULL, 3ULL, 5ULL}) {
    TaskSpec spec = hackable_default_spec();
    spec.seed = seed;
    const Task task = make_task(spec);  // construction asserts the property
    int disagree = 0;
    for (int x = 0; x < spec.prompt_count; ++x) {
      const auto& t = task.rewards.true_reward[x];
      const auto& p = task.rewards.proxy_reward[x];
      const auto ti = std::max_element(t.begin(), t.end()) - t.begin();
      const auto pi = std::max_element(p.begin(), p.end()) - p.begin();
      if (ti != pi) ++disagree;
    }
    if (2 * disagree < spec.prompt_count) {
      r.pass = false;
      r.detail = "seed " + std::to_string(seed);
    }
  }
  return r;
}

// ---- harness --------------------------------------------------------------------

CheckResult check_run_determinism(const Scale&) {
  CheckResult r{"harness/determinism", true, 0.0, 0.0, ""};
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "darlab_verify_determinism";
  ExperimentConfig config;
  config.task = standard_bandit_spec();
  config.algorithm = Algorithm::kDar;
  config.reg.steps = 25;
  config.seeds = {5};
  config.eval_every = 10;

  std::vector<std::string> bodies;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = base / ("rep" + std::to_string(rep));
    fs::remove_all(dir);
    config.output_dir = dir.string();
    run_experiment(config);
    bodies.push_back(read_text_file(
        (dir / "trace_dar_seed5.csv").string()));
  }
  if (bodies[0] != bodies[1]) {
    r.pass = false;
    r.detail = "trace files differ between identical runs";
  }
  fs::remove_all(base);
  return r;
}

CheckResult check_pareto_kl_selector(const Scale&) {
  CheckResult r{"harness/pareto_kl_selector", true, 0.0, kExactTol, ""};
  Rng rng(7110);
  auto space = make_space(4, 1);
  const PromptSet prompts = PromptSet::uniform(1);
  TabularPolicy policy = random_flat_policy(rng, space, 1);
  TabularPolicy pi0 = random_flat_policy(rng, space, 1);
  TabularPolicy pit = random_flat_policy(rng, space, 1);
  const double kl0 =
      kl_divergence(policy.distribution(0), pi0.distribution(0));
  const double klt =
      kl_divergence(policy.distribution(0), pit.distribution(0));
  const double alpha = 0.25;
  const double dual = pareto_kl_measure(Algorithm::kDar, alpha, policy, pi0,
                                        pit, prompts);
  const double plain = pareto_kl_measure(Algorithm::kPpoPenalty, alpha, policy,
                                         pi0, pit, prompts);
  r.discrepancy =
      std::max(std::abs(dual - (alpha * kl0 + (1 - alpha) * klt)),
               std::abs(plain - kl0));
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

CheckResult check_ci_arithmetic(const Scale&) {
  CheckResult r{"harness/ci_arithmetic", true, 0.0, kExactTol, ""};
  const std::vector<double> triple = {1.0, 2.0, 4.0};
  // sample std of {1,2,4} = sqrt(7/3); half width = 1.96*std/sqrt(3)
  const double expected = 1.96 * std::sqrt(7.0 / 3.0) / std::sqrt(3.0);
  r.discrepancy = std::abs(ci_half_width(triple) - expected);
  r.pass = r.discrepancy < r.tolerance;
  return r;
}

}  // namespace

VerifyReport verify_all(VerifyScale scale) {
  const Scale sc = scale_of(scale);
  VerifyReport report;
  report.checks.push_back(check_dual_kl_identity(sc));
  report.checks.push_back(check_normalizer_bound(sc));
  report.checks.push_back(check_kl_properties(sc));
  report.checks.push_back(check_ar_flat_agreement(sc));
  report.checks.push_back(check_softmax_normalization(sc));
  report.checks.push_back(check_gibbs_optimality(sc));
  report.checks.push_back(check_endpoint_reductions(sc));
  report.checks.push_back(check_beta_monotonicity(sc));
  report.checks.push_back(check_partition_consistency(sc));
  report.checks.push_back(check_fixed_point(sc));
  report.checks.push_back(check_weight_cap(sc));
  report.checks.push_back(check_dar_gradient(sc));
  report.checks.push_back(check_normalization_contract(sc));
  report.checks.push_back(check_alpha_zero_reduction(sc));
  report.checks.push_back(check_exact_convergence(sc));
  report.checks.push_back(check_monotone_improvement(sc));
  report.checks.push_back(check_baseline_gradients(sc));
  report.checks.push_back(check_baseline_reductions(sc));
  report.checks.push_back(check_telescoping(sc));
  report.checks.push_back(check_rloo_mc_identity(sc));
  report.checks.push_back(check_grpo_scale_invariance(sc));
  report.checks.push_back(check_task_determinism(sc));
  report.checks.push_back(check_win_rate_symmetry(sc));
  report.checks.push_back(check_hackable_argmax(sc));
  report.checks.push_back(check_run_determinism(sc));
  report.checks.push_back(check_pareto_kl_selector(sc));
  report.checks.push_back(check_ci_arithmetic(sc));
  return report;
}

std::string verify_report_to_json(const VerifyReport& report) {
  nlohmann::json j;
  j["failures"] = report.failures();
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"pass", c.pass},
                      {"discrepancy", c.discrepancy},
                      {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  }
  j["checks"] = std::move(checks);
  return j.dump(2) + "\n";
}

}  // namespace darlab

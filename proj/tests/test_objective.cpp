#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "darlab/objective.hpp"
#include "darlab/rng.hpp"

using namespace darlab;

namespace {

Distribution dist(std::initializer_list<double> probs) {
  return Distribution::from_probs(std::vector<double>(probs));
}

Distribution random_dist(Rng& rng, std::size_t n) {
  std::vector<double> logits(n);
  for (auto& v : logits) v = 1.5 * rng.normal();
  return Distribution::from_logits(logits);
}

std::vector<double> random_vals(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("rlhf objective with zero KL and constant reward") {
  const auto p = dist({0.3, 0.7});
  const std::vector<double> reward = {2.5, 2.5};
  CHECK(rlhf_objective(p, p, reward, 0.7) ==
        doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("rlhf objective decomposes into reward minus scaled KL") {
  Rng rng(5);
  const auto p = random_dist(rng, 6);
  const auto ref = random_dist(rng, 6);
  const auto reward = random_vals(rng, 6, 1.0);
  const double beta = 0.4;
  double expected_reward = 0.0;
  for (std::size_t i = 0; i < 6; ++i) expected_reward += p.probs[i] * reward[i];
  CHECK(rlhf_objective(p, ref, reward, beta) ==
        doctest::Approx(expected_reward - beta * kl_divergence(p, ref))
            .epsilon(1e-14));
}

TEST_CASE("rlhf objective two-term hand evaluation") {
  const auto p = dist({1.0, 0.0});
  const auto ref = dist({0.5, 0.5});
  const std::vector<double> reward = {1.0, 0.0};
  CHECK(rlhf_objective(p, ref, reward, 1.0) ==
        doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("dual objective endpoint and zero-penalty reductions") {
  Rng rng(6);
  const auto p = random_dist(rng, 5);
  const auto pi0 = random_dist(rng, 5);
  const auto pit = random_dist(rng, 5);
  const auto adv = random_vals(rng, 5, 1.0);
  const double beta = 0.8;

  CHECK(std::abs(dual_kl_objective(p, pi0, pit, adv, 1.0, beta) -
                 rlhf_objective(p, pi0, adv, beta)) < 1e-12);

  double expected = 0.0;
  for (std::size_t i = 0; i < 5; ++i) expected += p.probs[i] * adv[i];
  CHECK(dual_kl_objective(p, p, p, adv, 0.5, beta) ==
        doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("dual objective agrees with the interpolated-reference form") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 2 + rng.index(12);
    const auto p = random_dist(rng, n);
    const auto pi0 = random_dist(rng, n);
    const auto pit = random_dist(rng, n);
    const auto adv = random_vals(rng, n, 1.0);
    const double alpha = rng.uniform();
    const double beta = 0.1 + rng.uniform();
    const auto ref = interpolated_reference(pi0, pit, alpha);
    const double via_ref =
        rlhf_objective(p, ref.dist, adv, beta) + beta * ref.log_C;
    CHECK(std::abs(dual_kl_objective(p, pi0, pit, adv, alpha, beta) - via_ref) <
          1e-10);
  }
}

TEST_CASE("closed form with zero advantage is the interpolated reference") {
  Rng rng(8);
  const auto pi0 = random_dist(rng, 7);
  const auto pit = random_dist(rng, 7);
  const std::vector<double> adv(7, 0.0);
  const double alpha = 0.35;
  const auto closed = closed_form_optimal(pi0, pit, adv, alpha, 0.5);
  const auto ref = interpolated_reference(pi0, pit, alpha);
  for (std::size_t y = 0; y < 7; ++y) {
    CHECK(closed.dist.probs[y] ==
          doctest::Approx(ref.dist.probs[y]).epsilon(1e-13));
  }
  CHECK(closed.log_Z == doctest::Approx(ref.log_C).epsilon(1e-13));
}

TEST_CASE("closed form hand instance") {
  // unnormalized [1.5, 0.5]: 0.5 * exp(ln 3) and 0.5 * exp(0)
  const auto closed = closed_form_optimal(dist({0.5, 0.5}), dist({0.5, 0.5}),
                                          std::vector<double>{std::log(3.0), 0.0},
                                          0.5, 1.0);
  CHECK(closed.dist.probs[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(closed.dist.probs[1] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("closed form beats brute-force candidates") {
  Rng rng(9);
  const std::size_t n = 8;
  const auto pi0 = random_dist(rng, n);
  const auto pit = random_dist(rng, n);
  const auto adv = random_vals(rng, n, 1.0);
  const double alpha = 0.3, beta = 0.4;
  const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
  const double best = dual_kl_objective(closed.dist, pi0, pit, adv, alpha, beta);
  for (int c = 0; c < 500; ++c) {
    const auto q = random_dist(rng, n);
    CHECK(dual_kl_objective(q, pi0, pit, adv, alpha, beta) <= best + 1e-9);
  }
  const auto brute = brute_force_optimal(pi0, pit, adv, alpha, beta);
  CHECK(dual_kl_objective(brute, pi0, pit, adv, alpha, beta) <= best + 1e-9);
}

TEST_CASE("brute force matches the closed form on a two-response instance") {
  const auto brute = brute_force_optimal(
      dist({0.5, 0.5}), dist({0.5, 0.5}),
      std::vector<double>{std::log(3.0), 0.0}, 0.5, 1.0);
  CHECK(std::abs(brute.probs[0] - 0.75) < 1e-4);
  CHECK(std::abs(brute.probs[1] - 0.25) < 1e-4);
}

TEST_CASE("brute force recovers the interpolated reference at zero advantage") {
  const auto brute = brute_force_optimal(dist({0.8, 0.2}), dist({0.2, 0.8}),
                                         std::vector<double>{0.0, 0.0}, 0.5,
                                         1.0);
  CHECK(std::abs(brute.probs[0] - 0.5) < 1e-4);
  CHECK(std::abs(brute.probs[1] - 0.5) < 1e-4);
}

TEST_CASE("brute force objective gap on random instances") {
  Rng rng(10);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 8;
    const auto pi0 = random_dist(rng, n);
    const auto pit = random_dist(rng, n);
    const auto adv = random_vals(rng, n, 1.0);
    const double alpha = rng.uniform();
    const double beta = 0.1 + rng.uniform();
    const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
    const auto brute = brute_force_optimal(pi0, pit, adv, alpha, beta);
    const double gap =
        dual_kl_objective(closed.dist, pi0, pit, adv, alpha, beta) -
        dual_kl_objective(brute, pi0, pit, adv, alpha, beta);
    CHECK(gap >= -1e-9);
    CHECK(gap < 1e-6);
  }
}

TEST_CASE("brute force signals non-convergence on an exhausted budget") {
  Rng rng(11);
  const auto pi0 = random_dist(rng, 8);
  const auto pit = random_dist(rng, 8);
  const auto adv = random_vals(rng, 8, 5.0);
  BruteForceOptions opts;
  opts.budget = 2;
  try {
    brute_force_optimal(pi0, pit, adv, 0.5, 0.05, opts);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(!e.trace.empty());
  }
}

TEST_CASE("finite differences on a quadratic") {
  const std::vector<double> theta = {1.0, -2.0};
  const auto grad = finite_diff_grad(
      [](std::span<const double> t) {
        double s = 0.0;
        for (double v : t) s += v * v;
        return s;
      },
      theta, 1e-5);
  CHECK(grad[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(grad[1] == doctest::Approx(-4.0).epsilon(1e-8));
}

TEST_CASE("finite differences of a constant vanish") {
  const std::vector<double> theta = {0.3, 0.7, -1.0};
  const auto grad =
      finite_diff_grad([](std::span<const double>) { return 4.2; }, theta);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("finite differences report the offending coordinate") {
  const std::vector<double> theta = {0.0, 1.0};
  try {
    finite_diff_grad(
        [](std::span<const double> t) {
          return t[1] > 1.0 ? std::numeric_limits<double>::quiet_NaN() : t[0];
        },
        theta);
    FAIL("expected EvaluationError");
  } catch (const EvaluationError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("fixed point with zero reward is the reference") {
  Rng rng(12);
  const auto pi0 = random_dist(rng, 6);
  const std::vector<double> reward(6, 0.0);
  const auto fp = fixed_point_policy(pi0, reward, 0.4, 0.7);
  for (std::size_t y = 0; y < 6; ++y) {
    CHECK(fp.probs[y] == doctest::Approx(pi0.probs[y]).epsilon(1e-13));
  }
}

TEST_CASE("fixed point hand instance") {
  const double alpha = 0.3, beta = 0.2;
  const std::vector<double> reward = {alpha * beta * std::log(9.0), 0.0};
  const auto fp = fixed_point_policy(dist({0.5, 0.5}), reward, alpha, beta);
  CHECK(fp.probs[0] == doctest::Approx(0.9).epsilon(1e-13));
  CHECK(fp.probs[1] == doctest::Approx(0.1).epsilon(1e-13));
}

TEST_CASE("fixed point is self-consistent under the closed form") {
  Rng rng(13);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 2 + rng.index(14);
    const auto pi0 = random_dist(rng, n);
    const auto reward = random_vals(rng, n, 0.05);
    const double alpha = 0.2 + 0.7 * rng.uniform();
    const double beta = 0.5 + rng.uniform();
    const auto fp = fixed_point_policy(pi0, reward, alpha, beta);
    double value = 0.0;
    for (std::size_t y = 0; y < n; ++y) value += fp.probs[y] * reward[y];
    std::vector<double> adv(n);
    for (std::size_t y = 0; y < n; ++y) adv[y] = reward[y] - value;
    const auto closed = closed_form_optimal(pi0, fp, adv, alpha, beta);
    for (std::size_t y = 0; y < n; ++y) {
      CHECK(std::abs(closed.dist.probs[y] - fp.probs[y]) < 1e-10);
    }
  }
}

TEST_CASE("fixed point rejects the reference-free case") {
  const auto pi0 = dist({0.5, 0.5});
  CHECK_THROWS_AS(fixed_point_policy(pi0, std::vector<double>{1.0, 0.0}, 0.0,
                                     0.5),
                  ParameterError);
}

TEST_CASE("exact advantage table centers under the baseline policy") {
  Rng rng(14);
  auto space = make_space(6, 1);
  TabularPolicy policy = TabularPolicy::flat(space, 2);
  for (auto& v : policy.params()) v = rng.normal();
  std::vector<std::vector<double>> reward(2, std::vector<double>(6));
  for (auto& row : reward) {
    for (auto& v : row) v = rng.uniform();
  }
  const AdvantageTable table = exact_advantage_table(reward, policy);
  for (int x = 0; x < 2; ++x) {
    const Distribution d = policy.distribution(x);
    double mean = 0.0;
    for (std::size_t y = 0; y < 6; ++y) mean += d.probs[y] * table.values[x][y];
    CHECK(std::abs(mean) < 1e-10);
  }
}

TEST_CASE("partition value equals the log-sum-exp of the scores") {
  Rng rng(15);
  const std::size_t n = 9;
  const auto pi0 = random_dist(rng, n);
  const auto pit = random_dist(rng, n);
  const auto adv = random_vals(rng, n, 1.0);
  const double alpha = 0.25, beta = 0.15;
  const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
  std::vector<double> scores(n);
  for (std::size_t y = 0; y < n; ++y) {
    scores[y] = alpha * pi0.log_probs[y] + (1.0 - alpha) * pit.log_probs[y] +
                adv[y] / beta;
  }
  CHECK(std::abs(closed.log_Z - log_sum_exp(scores)) < 1e-12);
}

TEST_CASE("KL to the interpolated reference shrinks as beta grows") {
  Rng rng(16);
  const std::size_t n = 10;
  const auto pi0 = random_dist(rng, n);
  const auto pit = random_dist(rng, n);
  const auto adv = random_vals(rng, n, 1.0);
  const double alpha = 0.4;
  const auto ref = interpolated_reference(pi0, pit, alpha);
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.05, 0.1, 0.3, 0.5, 1.0, 5.0, 50.0}) {
    const auto closed = closed_form_optimal(pi0, pit, adv, alpha, beta);
    const double kl = kl_divergence(closed.dist, ref.dist);
    CHECK(kl <= prev + 1e-12);
    prev = kl;
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "darlab/kl.hpp"
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

}  // namespace

TEST_CASE("kl of a distribution with itself is zero") {
  const auto p = dist({0.2, 0.5, 0.3});
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kl single-term and two-term hand evaluations") {
  CHECK(kl_divergence(dist({1.0, 0.0}), dist({0.5, 0.5})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const double expected = 0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0);
  CHECK(kl_divergence(dist({0.5, 0.5}), dist({0.75, 0.25})) ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.1438).epsilon(1e-3));
}

TEST_CASE("a zero in q under p's support yields infinity, not a crash") {
  const double kl = kl_divergence(dist({0.5, 0.5}), dist({1.0, 0.0}));
  CHECK(std::isinf(kl));
  CHECK(kl > 0);
}

TEST_CASE("kl is nonnegative and detects identity") {
  Rng rng(314);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.index(20);
    const Distribution p = random_dist(rng, n);
    const Distribution q = random_dist(rng, n);
    CHECK(kl_divergence(p, q) >= -1e-15);
    CHECK(std::abs(kl_divergence(p, p)) < 1e-12);
  }
}

TEST_CASE("interpolation of identical distributions is the identity") {
  const auto d = dist({0.1, 0.6, 0.3});
  const auto ref = interpolated_reference(d, d, 0.37);
  CHECK(std::exp(ref.log_C) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ref.dist.probs[i] == doctest::Approx(d.probs[i]).epsilon(1e-12));
  }
}

TEST_CASE("interpolation endpoints return the inputs verbatim") {
  const auto a = dist({0.8, 0.2});
  const auto b = dist({0.3, 0.7});
  const auto at1 = interpolated_reference(a, b, 1.0);
  CHECK(at1.log_C == 0.0);
  CHECK(at1.dist.probs == a.probs);
  const auto at0 = interpolated_reference(a, b, 0.0);
  CHECK(at0.log_C == 0.0);
  CHECK(at0.dist.probs == b.probs);
}

TEST_CASE("geometric mean hand instance") {
  // sqrt(0.8 * 0.2) = 0.4 in both coordinates; C = 0.8
  const auto ref =
      interpolated_reference(dist({0.8, 0.2}), dist({0.2, 0.8}), 0.5);
  CHECK(std::exp(ref.log_C) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(ref.dist.probs[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(ref.dist.probs[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("alpha outside [0,1] is a parameter error") {
  const auto d = dist({0.5, 0.5});
  CHECK_THROWS_AS(interpolated_reference(d, d, -0.1), ParameterError);
  CHECK_THROWS_AS(interpolated_reference(d, d, 1.1), ParameterError);
}

TEST_CASE("dual-KL identity holds on random instances") {
  Rng rng(2718);
  const double alphas[] = {0.0, 0.1, 0.5, 0.9, 1.0};
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng.index(30);
    const Distribution p = random_dist(rng, n);
    const Distribution pi0 = random_dist(rng, n);
    const Distribution pit = random_dist(rng, n);
    for (double alpha : alphas) {
      const auto ref = interpolated_reference(pi0, pit, alpha);
      const double lhs = alpha * kl_divergence(p, pi0) +
                         (1.0 - alpha) * kl_divergence(p, pit);
      const double rhs = kl_divergence(p, ref.dist) - ref.log_C;
      CHECK(std::abs(lhs - rhs) < 1e-10);
    }
  }
}

TEST_CASE("normalizer stays in (0,1] and is 1 only for equal inputs") {
  Rng rng(1618);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.index(15);
    const Distribution a = random_dist(rng, n);
    const Distribution b = random_dist(rng, n);
    const double alpha = 0.05 + 0.9 * rng.uniform();
    const double c = std::exp(interpolated_reference(a, b, alpha).log_C);
    CHECK(c > 0.0);
    CHECK(c <= 1.0 + 1e-15);
    CHECK(c < 1.0);  // distinct random inputs
    const double c_same = std::exp(interpolated_reference(a, a, alpha).log_C);
    CHECK(std::abs(c_same - 1.0) < 1e-12);
  }
}

TEST_CASE("the sampled KL diagnostic concentrates on the exact value") {
  Rng rng(424);
  const Distribution p = random_dist(rng, 12);
  const Distribution q = random_dist(rng, 12);
  const double exact = kl_divergence(p, q);
  Rng sampler(99);
  const int n = 200000;
  const double approx = approx_kl_divergence(p, q, n, sampler);
  // variance of log p - log q under p, for a 3-sigma band
  double m2 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = p.log_probs[i] - q.log_probs[i];
    m2 += p.probs[i] * t * t;
  }
  const double sigma = std::sqrt(std::max(m2 - exact * exact, 0.0) / n);
  CHECK(std::abs(approx - exact) < 3.0 * sigma + 1e-12);
  CHECK_THROWS_AS(approx_kl_divergence(p, q, 0, sampler), ParameterError);
}

#include "darlab/objective.hpp"

#include <algorithm>
#include <cmath>

namespace darlab {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": size mismatch");
}

}  // namespace

double rlhf_objective(const Distribution& pi, const Distribution& ref,
                      std::span<const double> reward, double beta) {
  check_sizes(pi.size(), ref.size(), "rlhf_objective");
  check_sizes(pi.size(), reward.size(), "rlhf_objective");
  if (!(beta > 0.0)) throw ParameterError("rlhf_objective: beta must be > 0");
  double expected = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    expected += pi.probs[i] * reward[i];
  }
  return expected - beta * kl_divergence(pi, ref);
}

double dual_kl_objective(const Distribution& pi, const Distribution& pi0,
                         const Distribution& pit, std::span<const double> adv,
                         double alpha, double beta) {
  check_sizes(pi.size(), pi0.size(), "dual_kl_objective");
  check_sizes(pi.size(), pit.size(), "dual_kl_objective");
  check_sizes(pi.size(), adv.size(), "dual_kl_objective");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("dual_kl_objective: alpha must lie in [0, 1]");
  }
  if (!(beta > 0.0)) {
    throw ParameterError("dual_kl_objective: beta must be > 0");
  }
  double expected = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    expected += pi.probs[i] * adv[i];
  }
  return expected - beta * (alpha * kl_divergence(pi, pi0) +
                            (1.0 - alpha) * kl_divergence(pi, pit));
}

ClosedFormSolution closed_form_optimal(const Distribution& pi0,
                                       const Distribution& pit,
                                       std::span<const double> adv,
                                       double alpha, double beta) {
  check_sizes(pi0.size(), pit.size(), "closed_form_optimal");
  check_sizes(pi0.size(), adv.size(), "closed_form_optimal");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("closed_form_optimal: alpha must lie in [0, 1]");
  }
  if (!(beta > 0.0)) {
    throw ParameterError("closed_form_optimal: beta must be > 0");
  }
  std::vector<double> scores(pi0.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = alpha * pi0.log_probs[i] + (1.0 - alpha) * pit.log_probs[i] +
                adv[i] / beta;
  }
  ClosedFormSolution sol;
  sol.log_Z = log_sum_exp(scores);
  sol.dist = Distribution::from_logits(scores);
  return sol;
}

Distribution brute_force_optimal(const Distribution& pi0,
                                 const Distribution& pit,
                                 std::span<const double> adv, double alpha,
                                 double beta, const BruteForceOptions& opts) {
  const std::size_t n = pi0.size();
  if (n > 512) {
    throw ParameterError("brute_force_optimal is an oracle for spaces of at "
                         "most 512 responses");
  }
  std::vector<double> log_pi(n, -std::log(static_cast<double>(n)));
  Distribution current = Distribution::from_logits(log_pi);
  double value = dual_kl_objective(current, pi0, pit, adv, alpha, beta);

  std::vector<double> trace;
  trace.push_back(value);
  double step = opts.initial_step;
  std::vector<double> grad(n), candidate_logits(n);

  bool still_improving = true;
  for (int iter = 0; iter < opts.budget; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = adv[i] -
                beta * (current.log_probs[i] - alpha * pi0.log_probs[i] -
                        (1.0 - alpha) * pit.log_probs[i]) -
                beta;
    }
    bool accepted = false;
    while (step > 1e-18) {
      for (std::size_t i = 0; i < n; ++i) {
        candidate_logits[i] = current.log_probs[i] + step * grad[i];
      }
      Distribution candidate = Distribution::from_logits(candidate_logits);
      const double cand_value =
          dual_kl_objective(candidate, pi0, pit, adv, alpha, beta);
      if (cand_value >= value) {
        const double gain = cand_value - value;
        current = std::move(candidate);
        value = cand_value;
        trace.push_back(value);
        accepted = true;
        if (gain <= opts.improvement_tol * (1.0 + std::abs(value))) {
          still_improving = false;
        } else {
          still_improving = true;
        }
        break;
      }
      step *= 0.5;
    }
    if (!accepted || !still_improving) {
      still_improving = false;
      break;
    }
  }

  if (still_improving) {
    std::vector<double> tail(
        trace.end() - std::min<std::size_t>(trace.size(), 16), trace.end());
    throw ConvergenceError(
        "brute_force_optimal: objective still improving after budget of " +
            std::to_string(opts.budget) + " steps",
        std::move(tail));
  }
  return current;
}

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double step) {
  if (!(step > 0.0)) throw ParameterError("finite_diff_grad: step must be > 0");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + step;
    const double hi = f(point);
    point[i] = saved - step;
    const double lo = f(point);
    point[i] = saved;
    if (!std::isfinite(hi) || !std::isfinite(lo)) {
      throw EvaluationError("finite_diff_grad: non-finite value at coordinate " +
                            std::to_string(i));
    }
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

Distribution fixed_point_policy(const Distribution& pi0,
                                std::span<const double> reward, double alpha,
                                double beta) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ParameterError(
        "fixed_point_policy: alpha must lie in (0, 1]; the reference-free "
        "fixed point is undefined");
  }
  if (!(beta > 0.0)) {
    throw ParameterError("fixed_point_policy: beta must be > 0");
  }
  check_sizes(pi0.size(), reward.size(), "fixed_point_policy");
  std::vector<double> scores(pi0.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = pi0.log_probs[i] + reward[i] / (alpha * beta);
  }
  return Distribution::from_logits(scores);
}

AdvantageTable exact_advantage_table(
    const std::vector<std::vector<double>>& reward,
    const TabularPolicy& policy) {
  AdvantageTable table;
  table.values.resize(reward.size());
  table.baseline.resize(reward.size());
  for (int x = 0; x < static_cast<int>(reward.size()); ++x) {
    const Distribution d = policy.distribution(x);
    check_sizes(d.size(), reward[x].size(), "exact_advantage_table");
    double v = 0.0;
    for (std::size_t y = 0; y < d.size(); ++y) v += d.probs[y] * reward[x][y];
    table.baseline[x] = v;
    table.values[x].resize(d.size());
    for (std::size_t y = 0; y < d.size(); ++y) {
      table.values[x][y] = reward[x][y] - v;
    }
  }
  return table;
}

}  // namespace darlab

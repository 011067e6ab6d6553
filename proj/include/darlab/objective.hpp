#pragma once

// Exact objective evaluation, the closed-form optimum of the dual-KL
// advantage objective, and the independent oracles (mirror ascent, finite
// differences, fixed point) the rest of the library is validated against.

#include <functional>
#include <span>
#include <vector>

#include "darlab/kl.hpp"
#include "darlab/policy.hpp"

namespace darlab {

struct AdvantageTable {
  // values[prompt][response] = r(x, y) - V(x)
  std::vector<std::vector<double>> values;
  std::vector<double> baseline;  // V(x) per prompt
};

// Expected reward - beta * KL(pi || ref), summed exactly.
double rlhf_objective(const Distribution& pi, const Distribution& ref,
                      std::span<const double> reward, double beta);

// Expected advantage - beta * (alpha KL(pi||pi0) + (1-alpha) KL(pi||pit)).
double dual_kl_objective(const Distribution& pi, const Distribution& pi0,
                         const Distribution& pit, std::span<const double> adv,
                         double alpha, double beta);

struct ClosedFormSolution {
  Distribution dist;
  double log_Z = 0.0;
};

// pi*[y] proportional to pi0[y]^alpha * pit[y]^(1-alpha) * exp(adv[y]/beta),
// normalized in log space; log_Z is the log partition value.
ClosedFormSolution closed_form_optimal(const Distribution& pi0,
                                       const Distribution& pit,
                                       std::span<const double> adv,
                                       double alpha, double beta);

struct BruteForceOptions {
  int budget = 50'000;
  double initial_step = 0.1;
  // Stop early once the relative per-step improvement stays below this.
  double improvement_tol = 1e-16;
};

// Maximizes dual_kl_objective over the simplex by exponentiated-gradient
// ascent from the uniform start, halving the step whenever the objective
// would decrease. Throws ConvergenceError (with the objective trace tail)
// when the budget runs out while the objective is still climbing.
Distribution brute_force_optimal(const Distribution& pi0,
                                 const Distribution& pit,
                                 std::span<const double> adv, double alpha,
                                 double beta,
                                 const BruteForceOptions& opts = {});

// Central differences per coordinate. The callable must be evaluable at
// theta +- step*e_i; a non-finite value raises EvaluationError naming the
// coordinate.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double step = 1e-5);

// Self-consistent policy of the dual objective when the stability anchor is
// the policy itself: pi[y] proportional to pi0[y] * exp(reward[y]/(alpha*beta)).
// Serves as the convergence target for exact-expectation DAR runs.
Distribution fixed_point_policy(const Distribution& pi0,
                                std::span<const double> reward, double alpha,
                                double beta);

// Exact advantage table: A(x,y) = r(x,y) - sum_y pi(y|x) r(x,y).
AdvantageTable exact_advantage_table(
    const std::vector<std::vector<double>>& reward,
    const TabularPolicy& policy);

}  // namespace darlab

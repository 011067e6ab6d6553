#pragma once

// Exact KL divergences over enumerated distributions and the geometric
// interpolation of two reference policies.

#include "darlab/policy.hpp"

namespace darlab {

// Sum of p * log(p/q) in log space; terms with p == 0 contribute 0. A zero in
// q under the support of p yields +infinity rather than an exception.
double kl_divergence(const Distribution& p, const Distribution& q);

struct InterpolatedReference {
  Distribution dist;
  double log_C = 0.0;  // log of the normalizer; exp(log_C) in (0, 1]
};

// dist[y] = pi0[y]^alpha * pit[y]^(1-alpha) / C. Endpoints return the input
// distribution unchanged with log_C = 0.
InterpolatedReference interpolated_reference(const Distribution& pi0,
                                             const Distribution& pit,
                                             double alpha);

// APPROXIMATE sampling-based KL estimate (mean of log p - log q over draws
// from p). Diagnostic only; every supported code path uses the exact
// enumerated kl_divergence above.
double approx_kl_divergence(const Distribution& p, const Distribution& q,
                            int n_samples, Rng& rng);

}  // namespace darlab

#include "darlab/kl.hpp"

#include <cmath>
#include <limits>

namespace darlab {

double kl_divergence(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: distributions differ in size");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    acc += p.probs[i] * (p.log_probs[i] - q.log_probs[i]);
  }
  return acc;
}

InterpolatedReference interpolated_reference(const Distribution& pi0,
                                             const Distribution& pit,
                                             double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ParameterError("interpolated_reference: alpha must lie in [0, 1]");
  }
  if (pi0.size() != pit.size()) {
    throw ShapeError("interpolated_reference: distributions differ in size");
  }
  // Endpoints are returned verbatim; no 0^0 corner and log_C is exactly 0.
  if (alpha == 0.0) return {pit, 0.0};
  if (alpha == 1.0) return {pi0, 0.0};

  std::vector<double> mix(pi0.size());
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix[i] = alpha * pi0.log_probs[i] + (1.0 - alpha) * pit.log_probs[i];
  }
  const double log_c = log_sum_exp(mix);
  InterpolatedReference out;
  out.log_C = log_c;
  out.dist = Distribution::from_logits(mix);
  return out;
}

double approx_kl_divergence(const Distribution& p, const Distribution& q,
                            int n_samples, Rng& rng) {
  if (n_samples < 1) {
    throw ParameterError("approx_kl_divergence: n_samples must be >= 1");
  }
  if (p.size() != q.size()) {
    throw ShapeError("approx_kl_divergence: distributions differ in size");
  }
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const std::size_t y = rng.categorical(p.probs);
    acc += p.log_probs[y] - q.log_probs[y];
  }
  return acc / n_samples;
}

}  // namespace darlab

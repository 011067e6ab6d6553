#pragma once

// Shared numeric conventions and error types. All probability arithmetic in
// this library runs in log space; the tolerances below are used repo-wide.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace darlab {

// Exact-arithmetic identities (softmax normalization, telescoping, reductions).
inline constexpr double kExactTol = 1e-12;
// Analytic identities accumulated over random instances.
inline constexpr double kIdentityTol = 1e-10;
// Largest response space the enumerator will build unless overridden.
inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct EnumerationError : Error {
  using Error::Error;
};
struct EvaluationError : Error {
  using Error::Error;
};

// Raised when an iterative oracle exhausts its budget while still moving.
struct ConvergenceError : Error {
  ConvergenceError(const std::string& msg, std::vector<double> trace_tail)
      : Error(msg), trace(std::move(trace_tail)) {}
  std::vector<double> trace;
};

inline double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

inline double log_sum_exp(const std::vector<double>& values) {
  return log_sum_exp(std::span<const double>(values));
}

inline bool nearly_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

}  // namespace darlab
